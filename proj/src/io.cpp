#include "fracspde/io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <vector>

#include "fracspde/errors.hpp"

namespace fracspde {

namespace {

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) {
    while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
    while (!cur.empty() && cur.front() == ' ') cur.erase(cur.begin());
    out.push_back(cur);
  }
  return out;
}

double to_double(const std::string& s, long line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw InputError("csv line " + std::to_string(line) + ": '" + s + "' is not a number");
  return v;
}

// Rows of a numeric CSV whose header must be one of `headers`.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table read_table(std::istream& is, const std::vector<std::vector<std::string>>& headers,
                 const std::string& what) {
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw InputError(what + ": empty file");
  t.header = fields(line);
  bool ok = false;
  for (const auto& h : headers) ok = ok || h == t.header;
  if (!ok) {
    std::string expected;
    for (const auto& h : headers) {
      std::string joined;
      for (const auto& f : h) joined += (joined.empty() ? "" : ",") + f;
      expected += (expected.empty() ? "" : " or ") + joined;
    }
    throw InputError(what + ": header must be " + expected);
  }
  long n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    auto f = fields(line);
    if (f.size() != t.header.size())
      throw InputError(what + " line " + std::to_string(n) + ": expected " +
                       std::to_string(t.header.size()) + " fields");
    t.rows.push_back(std::move(f));
  }
  return t;
}

std::ifstream open(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return in;
}

}  // namespace

ObservationSet read_observations(std::istream& is) {
  const Table t = read_table(is, {{"x", "y", "value"}, {"x", "y", "value", "replicate"}}, "observations");
  const Index n = static_cast<Index>(t.rows.size());
  ObservationSet obs;
  obs.locations.resize(n, 2);
  obs.values.resize(n);
  obs.design.resize(n, 0);
  const bool rep = t.header.size() == 4;
  if (rep) obs.replicate.resize(t.rows.size());
  for (Index i = 0; i < n; ++i) {
    const auto& r = t.rows[i];
    obs.locations(i, 0) = to_double(r[0], i + 2);
    obs.locations(i, 1) = to_double(r[1], i + 2);
    obs.values(i) = to_double(r[2], i + 2);
    if (rep) {
      const double id = to_double(r[3], i + 2);
      if (id != std::round(id)) throw InputError("observations line " + std::to_string(i + 2) + ": replicate must be an integer");
      obs.replicate[i] = static_cast<int>(id);
    }
  }
  obs.validate();
  return obs;
}

ObservationSet read_observations(const std::string& path) {
  auto in = open(path);
  return read_observations(in);
}

void write_observations(std::ostream& os, const ObservationSet& obs) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "x,y,value,replicate\n";
  for (Index i = 0; i < obs.size(); ++i)
    os << obs.locations(i, 0) << ',' << obs.locations(i, 1) << ',' << obs.values(i) << ','
       << (obs.replicate.empty() ? 0 : obs.replicate[i]) << '\n';
}

Matrix read_locations(const std::string& path) {
  auto in = open(path);
  const Table t = read_table(in, {{"x", "y"}}, "locations");
  Matrix out(static_cast<Index>(t.rows.size()), 2);
  for (Index i = 0; i < out.rows(); ++i) {
    out(i, 0) = to_double(t.rows[i][0], i + 2);
    out(i, 1) = to_double(t.rows[i][1], i + 2);
  }
  return out;
}

void write_locations(std::ostream& os, const Matrix& locations) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "x,y\n";
  for (Index i = 0; i < locations.rows(); ++i) os << locations(i, 0) << ',' << locations(i, 1) << '\n';
}

std::vector<Prediction> read_prediction(const std::string& path) {
  auto in = open(path);
  const Table t = read_table(in, {{"x", "y", "mean", "sd", "scale"}}, "prediction");
  std::vector<Prediction> out;
  std::vector<std::vector<Index>> rows;
  for (Index i = 0; i < static_cast<Index>(t.rows.size()); ++i) {
    const std::string& name = t.rows[i][4];
    Scale s;
    if (name == "latent") s = Scale::Latent;
    else if (name == "observation") s = Scale::Observation;
    else throw InputError("prediction line " + std::to_string(i + 2) + ": unknown scale '" + name + "'");
    std::size_t k = 0;
    while (k < out.size() && out[k].scale != s) ++k;
    if (k == out.size()) {
      out.emplace_back();
      out.back().scale = s;
      rows.emplace_back();
    }
    rows[k].push_back(i);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    Prediction& p = out[k];
    const Index n = static_cast<Index>(rows[k].size());
    p.locations.resize(n, 2);
    p.mean.resize(n);
    p.sd.resize(n);
    for (Index j = 0; j < n; ++j) {
      const Index i = rows[k][j];
      const auto& r = t.rows[i];
      p.locations(j, 0) = to_double(r[0], i + 2);
      p.locations(j, 1) = to_double(r[1], i + 2);
      p.mean(j) = to_double(r[2], i + 2);
      p.sd(j) = to_double(r[3], i + 2);
    }
  }
  return out;
}

}  // namespace fracspde
