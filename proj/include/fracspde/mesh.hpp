#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "fracspde/sparse.hpp"

namespace fracspde {

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

using Triangle = std::array<int, 3>;
/// Rows are the gradients of the three hat functions on one triangle.
using P1Gradients = Eigen::Matrix<double, 3, 2>;

/// Triangulation with counter-clockwise triangles. `interest` is the region
/// of interest; the rest of the hull is the extension band.
class TriMesh {
 public:
  TriMesh() = default;
  /// Validates the triangles and flips clockwise ones.
  TriMesh(Matrix vertices, std::vector<Triangle> triangles, Rect interest, double extension);

  Index num_vertices() const { return vertices_.rows(); }
  Index num_triangles() const { return static_cast<Index>(triangles_.size()); }
  const Matrix& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const Rect& interest() const { return interest_; }
  double extension() const { return extension_; }
  /// num_triangles x 2.
  const Matrix& centroids() const { return centroids_; }
  const Vector& areas() const { return areas_; }
  double total_area() const { return areas_.sum(); }

  /// Index of a triangle containing (x, y), or -1.
  Index locate(double x, double y) const;
  /// Barycentric coordinates of (x, y) in triangle t.
  Eigen::Vector3d barycentric(Index t, double x, double y) const;

 private:
  Matrix vertices_;
  std::vector<Triangle> triangles_;
  Rect interest_;
  double extension_ = 0.0;
  Matrix centroids_;
  Vector areas_;
  // Uniform bucket grid over the bounding box for point location.
  double bx0_ = 0.0, by0_ = 0.0, bdx_ = 1.0, bdy_ = 1.0;
  int bnx_ = 1, bny_ = 1;
  std::vector<int> bucket_outer_, bucket_tris_;

  void build_buckets();
};

/// Structured grid over `interest` grown by `extension` on every side, each
/// square split into two triangles with alternating diagonals.
TriMesh build_rect_mesh(const Rect& interest, double extension, double target_edge_length);

/// Sparse (locations x vertices) matrix of barycentric weights. `locations`
/// is k x 2.
SparseMatrix projector(const TriMesh& mesh, const Matrix& locations);

/// Constant gradients of the three hat functions on triangle t.
P1Gradients gradients_p1(const TriMesh& mesh, Index t);

/// Plain-text mesh file: `vertices N`, N lines `x y`, `triangles M`, M lines
/// `i j k` (0-based). Optional trailing lines `interest x0 x1 y0 y1` and
/// `extension w`.
void save_mesh(std::ostream& os, const TriMesh& mesh);
TriMesh load_mesh(std::istream& is);
void save_mesh(const std::string& path, const TriMesh& mesh);
TriMesh load_mesh(const std::string& path);

}  // namespace fracspde
