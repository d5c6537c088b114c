#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "socnn/error.hpp"
#include "socnn/geometry.hpp"
#include "socnn/rng.hpp"

namespace socnn {

// Synthetic surface families. The first six are single-part classification
// shapes; the two-part composites carry per-point part labels for
// segmentation.
enum class ShapeFamily {
  kSphere = 0,
  kCube,
  kCylinder,
  kTorus,
  kCone,
  kPlane,
  kSphereOnCylinder,
  kConeOnCylinder,
  kCubeOnCylinder,
};

const std::vector<ShapeFamily>& classification_families();
const std::vector<ShapeFamily>& segmentation_families();
std::string family_name(ShapeFamily family);
ShapeFamily family_from_name(const std::string& name);

struct SyntheticShapeSpec {
  ShapeFamily family = ShapeFamily::kSphere;
  int n_points = 256;
  double noise_sigma = 0.0;
  uint64_t seed = 0;

  void validate() const {
    if (n_points < 1) throw ValueError("SyntheticShapeSpec: n_points must be >= 1");
    if (noise_sigma < 0.0) throw ValueError("SyntheticShapeSpec: noise_sigma must be >= 0");
  }
};

// Area-weighted uniform surface sample with Gaussian noise, normalized to the
// unit sphere. object_label is the family index; composites get per-point
// part labels (0 = base component, 1 = attached component).
PointCloud generate_primitive_cloud(const SyntheticShapeSpec& spec);

// Text format: optional "# label <int>" header, then one point per line as
// "x y z" or "x y z part_label", 9 significant digits.
void save_cloud(const std::string& path, const PointCloud& cloud);
PointCloud load_cloud(const std::string& path);

template <typename Item>
struct SplitResult {
  std::vector<Item> train;
  std::vector<Item> val;
  std::vector<Item> test;
};

// Seeded shuffle then partition by fractions (must sum to 1).
std::array<std::vector<int>, 3> dataset_split_indices(int count, std::array<double, 3> fractions,
                                                      uint64_t seed);

template <typename Item>
SplitResult<Item> dataset_split(const std::vector<Item>& items, std::array<double, 3> fractions,
                                uint64_t seed) {
  auto parts = dataset_split_indices(static_cast<int>(items.size()), fractions, seed);
  SplitResult<Item> out;
  for (int idx : parts[0]) out.train.push_back(items[static_cast<size_t>(idx)]);
  for (int idx : parts[1]) out.val.push_back(items[static_cast<size_t>(idx)]);
  for (int idx : parts[2]) out.test.push_back(items[static_cast<size_t>(idx)]);
  return out;
}

// --- metrics ---------------------------------------------------------------

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

// Mean IoU over shapes. Each shape's IoU averages over the part labels of its
// category; a part absent from both prediction and ground truth scores 1.
double miou(const std::vector<std::vector<int>>& per_point_preds,
            const std::vector<std::vector<int>>& per_point_labels,
            const std::vector<int>& shape_categories,
            const std::vector<std::vector<int>>& parts_per_category);

double shape_iou(const std::vector<int>& preds, const std::vector<int>& labels,
                 const std::vector<int>& category_parts);

// --- datasets ---------------------------------------------------------------

enum class Task { kClassification, kSegmentation };

struct Dataset {
  Task task = Task::kClassification;
  std::vector<PointCloud> clouds;
  int num_classes = 0;
  int num_parts = 0;                               // 0 for classification
  std::vector<std::vector<int>> parts_per_category;  // empty for classification

  int size() const { return static_cast<int>(clouds.size()); }
};

// `count` clouds cycling through the 6 classification families.
// object_label = class index in [0,6).
Dataset make_classification_dataset(int count, int n_points, double noise_sigma, uint64_t seed);

// `count` clouds cycling through the 3 composite families. object_label =
// category in [0,3); point labels are global part ids 2*category + {0,1}.
Dataset make_segmentation_dataset(int count, int n_points, double noise_sigma, uint64_t seed);

// Directory layout: <dir>/train, <dir>/val, <dir>/test with cloud_%05d.txt.
void save_dataset_dir(const std::string& dir, const Dataset& train, const Dataset& val,
                      const Dataset& test);
Dataset load_dataset_split_dir(const std::string& dir, Task task);

}  // namespace socnn
