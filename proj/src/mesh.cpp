#include "fracspde/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fracspde {

namespace {

double signed_area(const Matrix& v, const Triangle& t) {
  const double ax = v(t[1], 0) - v(t[0], 0), ay = v(t[1], 1) - v(t[0], 1);
  const double bx = v(t[2], 0) - v(t[0], 0), by = v(t[2], 1) - v(t[0], 1);
  return 0.5 * (ax * by - ay * bx);
}

}  // namespace

TriMesh::TriMesh(Matrix vertices, std::vector<Triangle> triangles, Rect interest,
                 double extension)
    : vertices_(std::move(vertices)),
      triangles_(std::move(triangles)),
      interest_(interest),
      extension_(extension) {
  if (vertices_.cols() != 2) throw DimensionError("mesh vertices must have two columns");
  const Index nt = num_triangles();
  centroids_.resize(nt, 2);
  areas_.resize(nt);
  for (Index t = 0; t < nt; ++t) {
    Triangle& tri = triangles_[t];
    for (int i : tri)
      if (i < 0 || i >= num_vertices())
        throw DimensionError("triangle " + std::to_string(t) + " references a missing vertex");
    double a = signed_area(vertices_, tri);
    if (a < 0) {
      std::swap(tri[1], tri[2]);
      a = -a;
    }
    if (!(a > 0)) throw GeometryError("triangle " + std::to_string(t) + " has zero area");
    areas_(t) = a;
    centroids_.row(t) =
        (vertices_.row(tri[0]) + vertices_.row(tri[1]) + vertices_.row(tri[2])) / 3.0;
  }
  build_buckets();
}

void TriMesh::build_buckets() {
  if (num_triangles() == 0) return;
  const double xmin = vertices_.col(0).minCoeff(), xmax = vertices_.col(0).maxCoeff();
  const double ymin = vertices_.col(1).minCoeff(), ymax = vertices_.col(1).maxCoeff();
  const double side = std::sqrt(std::max((xmax - xmin) * (ymax - ymin), 1e-300) /
                                static_cast<double>(num_triangles()));
  bnx_ = std::clamp(static_cast<int>(std::ceil((xmax - xmin) / side)), 1, 4096);
  bny_ = std::clamp(static_cast<int>(std::ceil((ymax - ymin) / side)), 1, 4096);
  bx0_ = xmin;
  by0_ = ymin;
  bdx_ = std::max(xmax - xmin, 1e-300) / bnx_;
  bdy_ = std::max(ymax - ymin, 1e-300) / bny_;

  auto cell_range = [&](double lo, double hi, double origin, double d, int n) {
    const int a = std::clamp(static_cast<int>(std::floor((lo - origin) / d)), 0, n - 1);
    const int b = std::clamp(static_cast<int>(std::floor((hi - origin) / d)), 0, n - 1);
    return std::pair<int, int>(a, b);
  };
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(bnx_) * bny_);
  for (Index t = 0; t < num_triangles(); ++t) {
    const Triangle& tri = triangles_[t];
    double lx = std::numeric_limits<double>::infinity(), hx = -lx, ly = lx, hy = -lx;
    for (int i : tri) {
      lx = std::min(lx, vertices_(i, 0));
      hx = std::max(hx, vertices_(i, 0));
      ly = std::min(ly, vertices_(i, 1));
      hy = std::max(hy, vertices_(i, 1));
    }
    const auto [ix0, ix1] = cell_range(lx, hx, bx0_, bdx_, bnx_);
    const auto [iy0, iy1] = cell_range(ly, hy, by0_, bdy_, bny_);
    for (int iy = iy0; iy <= iy1; ++iy)
      for (int ix = ix0; ix <= ix1; ++ix)
        buckets[static_cast<std::size_t>(iy) * bnx_ + ix].push_back(static_cast<int>(t));
  }
  bucket_outer_.assign(buckets.size() + 1, 0);
  for (std::size_t b = 0; b < buckets.size(); ++b)
    bucket_outer_[b + 1] = bucket_outer_[b] + static_cast<int>(buckets[b].size());
  bucket_tris_.clear();
  bucket_tris_.reserve(bucket_outer_.back());
  for (const auto& b : buckets) bucket_tris_.insert(bucket_tris_.end(), b.begin(), b.end());
}

Eigen::Vector3d TriMesh::barycentric(Index t, double x, double y) const {
  const Triangle& tri = triangles_[t];
  const double x0 = vertices_(tri[0], 0), y0 = vertices_(tri[0], 1);
  const double x1 = vertices_(tri[1], 0), y1 = vertices_(tri[1], 1);
  const double x2 = vertices_(tri[2], 0), y2 = vertices_(tri[2], 1);
  const double det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
  const double l1 = ((x - x0) * (y2 - y0) - (x2 - x0) * (y - y0)) / det;
  const double l2 = ((x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)) / det;
  return {1.0 - l1 - l2, l1, l2};
}

Index TriMesh::locate(double x, double y) const {
  if (bucket_outer_.empty() || !std::isfinite(x) || !std::isfinite(y)) return -1;
  const double fx = (x - bx0_) / bdx_, fy = (y - by0_) / bdy_;
  const double tol = 1e-9;
  if (fx < -tol || fy < -tol || fx > bnx_ + tol || fy > bny_ + tol) return -1;
  const int ix = std::clamp(static_cast<int>(std::floor(fx)), 0, bnx_ - 1);
  const int iy = std::clamp(static_cast<int>(std::floor(fy)), 0, bny_ - 1);
  const std::size_t b = static_cast<std::size_t>(iy) * bnx_ + ix;
  Index best = -1;
  double best_min = -std::numeric_limits<double>::infinity();
  for (int k = bucket_outer_[b]; k < bucket_outer_[b + 1]; ++k) {
    const int t = bucket_tris_[k];
    const double m = barycentric(t, x, y).minCoeff();
    if (m >= 0) return t;
    if (m > best_min) {
      best_min = m;
      best = t;
    }
  }
  return best_min > -1e-12 ? best : -1;
}

TriMesh build_rect_mesh(const Rect& interest, double extension, double target_edge_length) {
  if (!(target_edge_length > 0)) throw std::invalid_argument("edge length must be positive");
  if (!(extension >= 0)) throw std::invalid_argument("extension must be non-negative");
  if (!(interest.width() > 0) || !(interest.height() > 0))
    throw std::invalid_argument("interest rectangle must have positive size");
  const double x0 = interest.x0 - extension, x1 = interest.x1 + extension;
  const double y0 = interest.y0 - extension, y1 = interest.y1 + extension;
  const int nx = std::max(1, static_cast<int>(std::ceil((x1 - x0) / target_edge_length - 1e-9)));
  const int ny = std::max(1, static_cast<int>(std::ceil((y1 - y0) / target_edge_length - 1e-9)));

  Matrix v((nx + 1) * (ny + 1), 2);
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const int k = j * (nx + 1) + i;
      v(k, 0) = i == nx ? x1 : x0 + (x1 - x0) * i / nx;
      v(k, 1) = j == ny ? y1 : y0 + (y1 - y0) * j / ny;
    }
  std::vector<Triangle> tris;
  tris.reserve(2 * static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 1, d = c + 1;
      if ((i + j) % 2 == 0) {
        tris.push_back({a, b, d});
        tris.push_back({a, d, c});
      } else {
        tris.push_back({a, b, c});
        tris.push_back({b, d, c});
      }
    }
  return TriMesh(std::move(v), std::move(tris), interest, extension);
}

SparseMatrix projector(const TriMesh& mesh, const Matrix& locations) {
  if (locations.cols() != 2 && locations.rows() > 0)
    throw DimensionError("locations must have two columns");
  std::vector<Triplet> trip;
  trip.reserve(3 * locations.rows());
  for (Index p = 0; p < locations.rows(); ++p) {
    const double x = locations(p, 0), y = locations(p, 1);
    const Index t = mesh.locate(x, y);
    if (t < 0) {
      std::ostringstream msg;
      msg << "location " << p << " (" << x << ", " << y << ") is outside the mesh";
      throw OutsideMeshError(msg.str(), static_cast<long>(p));
    }
    Eigen::Vector3d w = mesh.barycentric(t, x, y).cwiseMax(0.0);
    w /= w.sum();
    const Triangle& tri = mesh.triangles()[t];
    for (int i = 0; i < 3; ++i)
      if (w(i) != 0.0) trip.emplace_back(static_cast<int>(p), tri[i], w(i));
  }
  return assemble_csc(trip, locations.rows(), mesh.num_vertices());
}

P1Gradients gradients_p1(const TriMesh& mesh, Index t) {
  if (t < 0 || t >= mesh.num_triangles()) throw DimensionError("triangle index out of range");
  const Triangle& tri = mesh.triangles()[t];
  const Matrix& v = mesh.vertices();
  const double x0 = v(tri[0], 0), y0 = v(tri[0], 1);
  const double x1 = v(tri[1], 0), y1 = v(tri[1], 1);
  const double x2 = v(tri[2], 0), y2 = v(tri[2], 1);
  const double det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
  if (det == 0.0) throw GeometryError("degenerate triangle " + std::to_string(t));
  P1Gradients g;
  g(1, 0) = (y2 - y0) / det;
  g(1, 1) = -(x2 - x0) / det;
  g(2, 0) = -(y1 - y0) / det;
  g(2, 1) = (x1 - x0) / det;
  g.row(0) = -g.row(1) - g.row(2);
  return g;
}

void save_mesh(std::ostream& os, const TriMesh& mesh) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "vertices " << mesh.num_vertices() << '\n';
  for (Index i = 0; i < mesh.num_vertices(); ++i)
    os << mesh.vertices()(i, 0) << ' ' << mesh.vertices()(i, 1) << '\n';
  os << "triangles " << mesh.num_triangles() << '\n';
  for (const Triangle& t : mesh.triangles()) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  const Rect& r = mesh.interest();
  os << "interest " << r.x0 << ' ' << r.x1 << ' ' << r.y0 << ' ' << r.y1 << '\n';
  os << "extension " << mesh.extension() << '\n';
}

TriMesh load_mesh(std::istream& is) {
  auto expect = [&](const char* keyword) {
    std::string word;
    if (!(is >> word) || word != keyword)
      throw InputError(std::string("mesh file: expected '") + keyword + "'");
  };
  long n = 0, m = 0;
  expect("vertices");
  if (!(is >> n) || n < 0) throw InputError("mesh file: bad vertex count");
  Matrix v(n, 2);
  for (long i = 0; i < n; ++i)
    if (!(is >> v(i, 0) >> v(i, 1))) throw InputError("mesh file: bad vertex line " + std::to_string(i));
  expect("triangles");
  if (!(is >> m) || m < 0) throw InputError("mesh file: bad triangle count");
  std::vector<Triangle> tris(m);
  for (long t = 0; t < m; ++t)
    if (!(is >> tris[t][0] >> tris[t][1] >> tris[t][2]))
      throw InputError("mesh file: bad triangle line " + std::to_string(t));

  Rect interest{v.col(0).minCoeff(), v.col(0).maxCoeff(), v.col(1).minCoeff(), v.col(1).maxCoeff()};
  double extension = 0.0;
  std::string word;
  while (is >> word) {
    if (word == "interest") {
      if (!(is >> interest.x0 >> interest.x1 >> interest.y0 >> interest.y1))
        throw InputError("mesh file: bad interest line");
    } else if (word == "extension") {
      if (!(is >> extension)) throw InputError("mesh file: bad extension line");
    } else {
      throw InputError("mesh file: unexpected token '" + word + "'");
    }
  }
  return TriMesh(std::move(v), std::move(tris), interest, extension);
}

void save_mesh(const std::string& path, const TriMesh& mesh) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  save_mesh(os, mesh);
}

TriMesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  return load_mesh(is);
}

}  // namespace fracspde
