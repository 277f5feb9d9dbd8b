#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>

namespace elvis {

using Index = Eigen::Index;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Raised when an input violates an operation's precondition (shapes, ranges, masks).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for failures that happen while running (I/O, divergence, corrupt files).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

enum class Modality { Image, Text };

inline const char* to_string(Modality m) { return m == Modality::Image ? "image" : "text"; }

struct GridShape {
  Index rows = 0;
  Index cols = 0;
  Index cells() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

/// N local vectors of one modality (image grid cells or report sentences), one per row.
template <typename Scalar>
struct LocalEmbeddings {
  Modality modality = Modality::Image;
  Matrix<Scalar> vectors;
  Mask mask;
  std::optional<GridShape> grid;

  Index size() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
  Index valid_count() const { return mask.count(); }

  static LocalEmbeddings image(Matrix<Scalar> v, GridShape shape) {
    LocalEmbeddings out;
    out.modality = Modality::Image;
    out.mask = Mask::Constant(v.rows(), true);
    out.vectors = std::move(v);
    out.grid = shape;
    out.validate();
    return out;
  }

  static LocalEmbeddings text(Matrix<Scalar> v, Mask m) {
    LocalEmbeddings out;
    out.modality = Modality::Text;
    out.vectors = std::move(v);
    out.mask = std::move(m);
    out.validate();
    return out;
  }

  static LocalEmbeddings text(Matrix<Scalar> v) {
    Mask m = Mask::Constant(v.rows(), true);
    return text(std::move(v), std::move(m));
  }

  void validate() const {
    require(vectors.rows() >= 1 && vectors.cols() >= 1, "local embeddings must be non-empty");
    require(mask.size() == vectors.rows(), "mask length must equal the number of local vectors");
    require(mask.any(), "at least one local position must be valid");
    require(vectors.allFinite(), "local embeddings must be finite");
    if (modality == Modality::Image) {
      require(grid.has_value(), "image local embeddings need a grid shape");
      require(mask.all(), "image grids cannot carry padding");
      require(grid->cells() == vectors.rows(), "grid rows*cols must equal the number of cells");
    }
  }

  /// Rows whose mask entry is true, in order.
  Matrix<Scalar> valid_rows() const {
    Matrix<Scalar> out(valid_count(), dim());
    Index k = 0;
    for (Index i = 0; i < size(); ++i)
      if (mask(i)) out.row(k++) = vectors.row(i);
    return out;
  }
};

template <typename Scalar>
struct GlobalEmbedding {
  Modality modality = Modality::Image;
  Vector<Scalar> vector;

  Index dim() const { return vector.size(); }
};

/// Cosine similarities between two sets of vectors; masked rows/columns hold 0.
template <typename Scalar>
struct SimilarityMatrix {
  Matrix<Scalar> values;
  Mask row_mask;
  Mask col_mask;
};

enum class Axis { Row, Col };

/// Temperature softmax of a similarity matrix along one axis.
template <typename Scalar>
struct ProbabilityMap {
  Matrix<Scalar> values;
  Axis axis = Axis::Row;
  Scalar temperature = Scalar(1);
};

}  // namespace elvis
