#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fracspde/model.hpp"
#include "fracspde/predict.hpp"

namespace fracspde {

/// CSV with header x,y,value[,replicate].
ObservationSet read_observations(std::istream& is);
ObservationSet read_observations(const std::string& path);
void write_observations(std::ostream& os, const ObservationSet& obs);

/// CSV with header x,y.
Matrix read_locations(const std::string& path);
void write_locations(std::ostream& os, const Matrix& locations);

/// CSV with header x,y,mean,sd,scale; one Prediction per scale, in order of
/// first appearance.
std::vector<Prediction> read_prediction(const std::string& path);

}  // namespace fracspde
