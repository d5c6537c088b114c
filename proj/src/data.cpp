#include "socnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace socnn {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct SurfacePart {
  double area;
  int part_label;  // -1 for single-part shapes
  std::function<std::array<double, 3>(Rng&)> sample;
};

std::array<double, 3> sample_sphere(Rng& rng, double radius, double cz) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {radius * s * std::cos(phi), radius * s * std::sin(phi), radius * z + cz};
}

std::array<double, 3> sample_disk(Rng& rng, double radius, double z) {
  const double r = radius * std::sqrt(rng.uniform());
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  return {r * std::cos(phi), r * std::sin(phi), z};
}

std::array<double, 3> sample_cylinder_side(Rng& rng, double radius, double z0, double z1) {
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double z = rng.uniform(z0, z1);
  return {radius * std::cos(phi), radius * std::sin(phi), z};
}

std::array<double, 3> sample_cone_side(Rng& rng, double base_radius, double base_z, double apex_z) {
  // Uniform over the lateral surface: area grows with distance from apex.
  const double t = std::sqrt(rng.uniform());
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double r = base_radius * t;
  const double z = apex_z + (base_z - apex_z) * t;
  return {r * std::cos(phi), r * std::sin(phi), z};
}

std::array<double, 3> sample_torus(Rng& rng, double major, double minor) {
  while (true) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double eta = rng.uniform(0.0, 2.0 * kPi);
    const double w = rng.uniform();
    if (w <= (major + minor * std::cos(eta)) / (major + minor)) {
      const double rad = major + minor * std::cos(eta);
      return {rad * std::cos(theta), rad * std::sin(theta), minor * std::sin(eta)};
    }
  }
}

std::array<double, 3> sample_cube_surface(Rng& rng, double half, double cz) {
  const int face = rng.uniform_int(6);
  const double u = rng.uniform(-half, half);
  const double v = rng.uniform(-half, half);
  switch (face) {
    case 0: return {half, u, v + cz};
    case 1: return {-half, u, v + cz};
    case 2: return {u, half, v + cz};
    case 3: return {u, -half, v + cz};
    case 4: return {u, v, half + cz};
    default: return {u, v, -half + cz};
  }
}

std::vector<SurfacePart> shape_parts(ShapeFamily family) {
  std::vector<SurfacePart> parts;
  switch (family) {
    case ShapeFamily::kSphere: {
      parts.push_back({4.0 * kPi, -1, [](Rng& r) { return sample_sphere(r, 1.0, 0.0); }});
      break;
    }
    case ShapeFamily::kCube: {
      parts.push_back({24.0, -1, [](Rng& r) { return sample_cube_surface(r, 1.0, 0.0); }});
      break;
    }
    case ShapeFamily::kCylinder: {
      const double radius = 0.6, z0 = -1.0, z1 = 1.0;
      parts.push_back({2.0 * kPi * radius * (z1 - z0), -1,
                       [=](Rng& r) { return sample_cylinder_side(r, radius, z0, z1); }});
      parts.push_back({kPi * radius * radius, -1, [=](Rng& r) { return sample_disk(r, radius, z1); }});
      parts.push_back({kPi * radius * radius, -1, [=](Rng& r) { return sample_disk(r, radius, z0); }});
      break;
    }
    case ShapeFamily::kTorus: {
      const double major = 0.75, minor = 0.3;
      parts.push_back({4.0 * kPi * kPi * major * minor, -1,
                       [=](Rng& r) { return sample_torus(r, major, minor); }});
      break;
    }
    case ShapeFamily::kCone: {
      const double radius = 0.8, base_z = 0.0, apex_z = 1.6;
      const double slant = std::sqrt(radius * radius + (apex_z - base_z) * (apex_z - base_z));
      parts.push_back({kPi * radius * slant, -1,
                       [=](Rng& r) { return sample_cone_side(r, radius, base_z, apex_z); }});
      parts.push_back({kPi * radius * radius, -1, [=](Rng& r) { return sample_disk(r, radius, base_z); }});
      break;
    }
    case ShapeFamily::kPlane: {
      parts.push_back({4.0, -1, [](Rng& r) {
                         const double u = r.uniform(-1.0, 1.0);
                         const double v = r.uniform(-1.0, 1.0);
                         return std::array<double, 3>{u, v, 0.0};
                       }});
      break;
    }
    case ShapeFamily::kSphereOnCylinder: {
      const double radius = 0.3, z0 = -1.0, z1 = 0.2;
      const double sr = 0.55, sz = 0.55;
      parts.push_back({2.0 * kPi * radius * (z1 - z0), 0,
                       [=](Rng& r) { return sample_cylinder_side(r, radius, z0, z1); }});
      parts.push_back({kPi * radius * radius, 0, [=](Rng& r) { return sample_disk(r, radius, z0); }});
      parts.push_back({4.0 * kPi * sr * sr, 1, [=](Rng& r) { return sample_sphere(r, sr, sz); }});
      break;
    }
    case ShapeFamily::kConeOnCylinder: {
      const double radius = 0.35, z0 = -1.0, z1 = 0.3;
      const double cone_r = 0.6, apex_z = 1.5;
      const double slant = std::sqrt(cone_r * cone_r + (apex_z - z1) * (apex_z - z1));
      parts.push_back({2.0 * kPi * radius * (z1 - z0), 0,
                       [=](Rng& r) { return sample_cylinder_side(r, radius, z0, z1); }});
      parts.push_back({kPi * radius * radius, 0, [=](Rng& r) { return sample_disk(r, radius, z0); }});
      parts.push_back({kPi * cone_r * slant, 1,
                       [=](Rng& r) { return sample_cone_side(r, cone_r, z1, apex_z); }});
      parts.push_back({kPi * cone_r * cone_r, 1, [=](Rng& r) { return sample_disk(r, cone_r, z1); }});
      break;
    }
    case ShapeFamily::kCubeOnCylinder: {
      const double radius = 0.25, z0 = -1.0, z1 = 0.25;
      const double half = 0.5, cz = 0.75;
      parts.push_back({2.0 * kPi * radius * (z1 - z0), 0,
                       [=](Rng& r) { return sample_cylinder_side(r, radius, z0, z1); }});
      parts.push_back({kPi * radius * radius, 0, [=](Rng& r) { return sample_disk(r, radius, z0); }});
      parts.push_back({6.0 * (2.0 * half) * (2.0 * half), 1,
                       [=](Rng& r) { return sample_cube_surface(r, half, cz); }});
      break;
    }
  }
  return parts;
}

}  // namespace

const std::vector<ShapeFamily>& classification_families() {
  static const std::vector<ShapeFamily> families = {
      ShapeFamily::kSphere,   ShapeFamily::kCube, ShapeFamily::kCylinder,
      ShapeFamily::kTorus,    ShapeFamily::kCone, ShapeFamily::kPlane,
  };
  return families;
}

const std::vector<ShapeFamily>& segmentation_families() {
  static const std::vector<ShapeFamily> families = {
      ShapeFamily::kSphereOnCylinder,
      ShapeFamily::kConeOnCylinder,
      ShapeFamily::kCubeOnCylinder,
  };
  return families;
}

std::string family_name(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::kSphere: return "sphere";
    case ShapeFamily::kCube: return "cube";
    case ShapeFamily::kCylinder: return "cylinder";
    case ShapeFamily::kTorus: return "torus";
    case ShapeFamily::kCone: return "cone";
    case ShapeFamily::kPlane: return "plane";
    case ShapeFamily::kSphereOnCylinder: return "sphere_on_cylinder";
    case ShapeFamily::kConeOnCylinder: return "cone_on_cylinder";
    case ShapeFamily::kCubeOnCylinder: return "cube_on_cylinder";
  }
  throw ValueError("family_name: unknown family");
}

ShapeFamily family_from_name(const std::string& name) {
  for (int f = 0; f <= static_cast<int>(ShapeFamily::kCubeOnCylinder); ++f) {
    if (family_name(static_cast<ShapeFamily>(f)) == name) return static_cast<ShapeFamily>(f);
  }
  throw ValueError("family_from_name: unknown family '" + name + "'");
}

PointCloud generate_primitive_cloud(const SyntheticShapeSpec& spec) {
  spec.validate();
  const auto parts = shape_parts(spec.family);
  double total_area = 0.0;
  for (const auto& p : parts) total_area += p.area;

  Rng rng(spec.seed);
  PointCloud cloud;
  cloud.coords.resize(static_cast<size_t>(spec.n_points));
  const bool labeled = parts.front().part_label >= 0;
  if (labeled) cloud.point_labels.resize(static_cast<size_t>(spec.n_points));
  if (spec.family == ShapeFamily::kSphere) {
    // Antipodal pairs: the sample centroid cancels exactly, so for even
    // counts normalization keeps every noise-free point at norm 1.
    for (int i = 0; i < spec.n_points; ++i) {
      if (i % 2 == 1) {
        const auto& prev = cloud.coords[static_cast<size_t>(i) - 1];
        cloud.coords[static_cast<size_t>(i)] = {-prev[0], -prev[1], -prev[2]};
      } else {
        cloud.coords[static_cast<size_t>(i)] = sample_sphere(rng, 1.0, 0.0);
      }
    }
  } else {
    for (int i = 0; i < spec.n_points; ++i) {
      double pick = rng.uniform(0.0, total_area);
      size_t which = 0;
      while (which + 1 < parts.size() && pick > parts[which].area) {
        pick -= parts[which].area;
        ++which;
      }
      cloud.coords[static_cast<size_t>(i)] = parts[which].sample(rng);
      if (labeled) cloud.point_labels[static_cast<size_t>(i)] = parts[which].part_label;
    }
  }
  if (spec.noise_sigma > 0.0) {
    for (auto& p : cloud.coords) {
      for (int d = 0; d < 3; ++d) p[static_cast<size_t>(d)] += rng.normal(0.0, spec.noise_sigma);
    }
  }
  cloud.object_label = static_cast<int>(spec.family);
  return normalize_unit_sphere(cloud);
}

// --- cloud text I/O ----------------------------------------------------------

void save_cloud(const std::string& path, const PointCloud& cloud) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("save_cloud: cannot open '" + tmp + "' for writing");
    char buf[160];
    if (cloud.object_label >= 0) out << "# label " << cloud.object_label << "\n";
    const bool labeled = cloud.has_point_labels();
    if (labeled && cloud.point_labels.size() != cloud.coords.size()) {
      throw ValueError("save_cloud: label count mismatch");
    }
    for (size_t i = 0; i < cloud.coords.size(); ++i) {
      const auto& p = cloud.coords[i];
      if (labeled) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d\n", p[0], p[1], p[2], cloud.point_labels[i]);
      } else {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
      }
      out << buf;
    }
    if (!out) throw IoError("save_cloud: write failed for '" + tmp + "'");
  }
  fs::rename(tmp, path);
}

PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_cloud: cannot open '" + path + "'");
  PointCloud cloud;
  std::string line;
  int line_no = 0;
  int label_columns = -1;  // -1 unknown, 0 none, 1 per-point labels
  while (std::getline(in, line)) {
    ++line_no;
    // Strip comments; the "# label" header is the one recognized directive.
    if (!line.empty() && line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string word;
      if (hs >> word && word == "label") {
        int lbl = 0;
        if (!(hs >> lbl)) throw ParseError("load_cloud: malformed label header", line_no);
        cloud.object_label = lbl;
      }
      continue;
    }
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string f;
    while (ls >> f) fields.push_back(f);
    if (fields.empty()) continue;  // blank line
    if (fields.size() != 3 && fields.size() != 4) {
      throw ParseError("load_cloud: expected 3 or 4 fields, got " + std::to_string(fields.size()),
                       line_no);
    }
    std::array<double, 3> p{};
    for (int d = 0; d < 3; ++d) {
      size_t pos = 0;
      try {
        p[static_cast<size_t>(d)] = std::stod(fields[static_cast<size_t>(d)], &pos);
      } catch (const std::exception&) {
        throw ParseError("load_cloud: bad coordinate '" + fields[static_cast<size_t>(d)] + "'", line_no);
      }
      if (pos != fields[static_cast<size_t>(d)].size()) {
        throw ParseError("load_cloud: bad coordinate '" + fields[static_cast<size_t>(d)] + "'", line_no);
      }
    }
    const int has_label = fields.size() == 4 ? 1 : 0;
    if (label_columns == -1) {
      label_columns = has_label;
    } else if (label_columns != has_label) {
      throw ParseError("load_cloud: inconsistent per-point label columns", line_no);
    }
    if (has_label) {
      try {
        cloud.point_labels.push_back(std::stoi(fields[3]));
      } catch (const std::exception&) {
        throw ParseError("load_cloud: bad part label '" + fields[3] + "'", line_no);
      }
    }
    cloud.coords.push_back(p);
  }
  if (cloud.coords.empty()) throw ParseError("load_cloud: no points in '" + path + "'");
  return cloud;
}

// --- splits ------------------------------------------------------------------

std::array<std::vector<int>, 3> dataset_split_indices(int count, std::array<double, 3> fractions,
                                                      uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ValueError("dataset_split: fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValueError("dataset_split: fractions sum to " + std::to_string(sum) + ", expected 1");
  }
  std::vector<int> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const int c0 = static_cast<int>(std::llround(fractions[0] * count));
  const int c01 = static_cast<int>(std::llround((fractions[0] + fractions[1]) * count));
  std::array<std::vector<int>, 3> out;
  out[0].assign(order.begin(), order.begin() + c0);
  out[1].assign(order.begin() + c0, order.begin() + c01);
  out[2].assign(order.begin() + c01, order.end());
  return out;
}

// --- metrics -----------------------------------------------------------------

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) {
    throw ShapeError("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw ValueError("accuracy: empty inputs");
  int correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double shape_iou(const std::vector<int>& preds, const std::vector<int>& labels,
                 const std::vector<int>& category_parts) {
  if (preds.size() != labels.size()) throw ShapeError("shape_iou: length mismatch");
  if (category_parts.empty()) throw ValueError("shape_iou: category has no parts");
  double total = 0.0;
  for (int part : category_parts) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
      const bool in_pred = preds[i] == part;
      const bool in_gt = labels[i] == part;
      inter += (in_pred && in_gt) ? 1 : 0;
      uni += (in_pred || in_gt) ? 1 : 0;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(category_parts.size());
}

double miou(const std::vector<std::vector<int>>& per_point_preds,
            const std::vector<std::vector<int>>& per_point_labels,
            const std::vector<int>& shape_categories,
            const std::vector<std::vector<int>>& parts_per_category) {
  if (per_point_preds.size() != per_point_labels.size() ||
      per_point_preds.size() != shape_categories.size()) {
    throw ShapeError("miou: input length mismatch");
  }
  if (per_point_preds.empty()) throw ValueError("miou: empty inputs");
  double total = 0.0;
  for (size_t s = 0; s < per_point_preds.size(); ++s) {
    const int cat = shape_categories[s];
    if (cat < 0 || cat >= static_cast<int>(parts_per_category.size())) {
      throw ValueError("miou: category " + std::to_string(cat) + " out of range");
    }
    total += shape_iou(per_point_preds[s], per_point_labels[s], parts_per_category[static_cast<size_t>(cat)]);
  }
  return total / static_cast<double>(per_point_preds.size());
}

// --- datasets ----------------------------------------------------------------

Dataset make_classification_dataset(int count, int n_points, double noise_sigma, uint64_t seed) {
  const auto& families = classification_families();
  Dataset ds;
  ds.task = Task::kClassification;
  ds.num_classes = static_cast<int>(families.size());
  for (int i = 0; i < count; ++i) {
    SyntheticShapeSpec spec;
    spec.family = families[static_cast<size_t>(i) % families.size()];
    spec.n_points = n_points;
    spec.noise_sigma = noise_sigma;
    spec.seed = mix_seed(seed, static_cast<uint64_t>(i));
    PointCloud cloud = generate_primitive_cloud(spec);
    cloud.object_label = static_cast<int>(static_cast<size_t>(i) % families.size());
    ds.clouds.push_back(std::move(cloud));
  }
  return ds;
}

Dataset make_segmentation_dataset(int count, int n_points, double noise_sigma, uint64_t seed) {
  const auto& families = segmentation_families();
  Dataset ds;
  ds.task = Task::kSegmentation;
  ds.num_classes = static_cast<int>(families.size());
  ds.num_parts = 2 * static_cast<int>(families.size());
  for (size_t c = 0; c < families.size(); ++c) {
    ds.parts_per_category.push_back({static_cast<int>(2 * c), static_cast<int>(2 * c + 1)});
  }
  for (int i = 0; i < count; ++i) {
    const int cat = static_cast<int>(static_cast<size_t>(i) % families.size());
    SyntheticShapeSpec spec;
    spec.family = families[static_cast<size_t>(cat)];
    spec.n_points = n_points;
    spec.noise_sigma = noise_sigma;
    spec.seed = mix_seed(seed, static_cast<uint64_t>(i));
    PointCloud cloud = generate_primitive_cloud(spec);
    cloud.object_label = cat;
    for (auto& lbl : cloud.point_labels) lbl += 2 * cat;  // local part -> global part id
    ds.clouds.push_back(std::move(cloud));
  }
  return ds;
}

namespace {

void save_split(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  char name[32];
  for (size_t i = 0; i < ds.clouds.size(); ++i) {
    std::snprintf(name, sizeof(name), "cloud_%05zu.txt", i);
    save_cloud(dir + "/" + name, ds.clouds[i]);
  }
}

}  // namespace

void save_dataset_dir(const std::string& dir, const Dataset& train, const Dataset& val,
                      const Dataset& test) {
  save_split(dir + "/train", train);
  save_split(dir + "/val", val);
  save_split(dir + "/test", test);
}

Dataset load_dataset_split_dir(const std::string& dir, Task task) {
  if (!fs::is_directory(dir)) throw IoError("load_dataset_split_dir: '" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  Dataset ds;
  ds.task = task;
  if (task == Task::kClassification) {
    ds.num_classes = static_cast<int>(classification_families().size());
  } else {
    const int cats = static_cast<int>(segmentation_families().size());
    ds.num_classes = cats;
    ds.num_parts = 2 * cats;
    for (int c = 0; c < cats; ++c) ds.parts_per_category.push_back({2 * c, 2 * c + 1});
  }
  for (const auto& f : files) {
    PointCloud cloud = load_cloud(f);
    if (cloud.object_label < 0 || cloud.object_label >= ds.num_classes) {
      throw ValueError("load_dataset_split_dir: '" + f + "' has label " +
                       std::to_string(cloud.object_label) + ", expected [0," +
                       std::to_string(ds.num_classes) + ")");
    }
    if (task == Task::kSegmentation) {
      if (!cloud.has_point_labels()) {
        throw ValueError("load_dataset_split_dir: '" + f + "' lacks per-point labels");
      }
      for (int lbl : cloud.point_labels) {
        if (lbl < 0 || lbl >= ds.num_parts) {
          throw ValueError("load_dataset_split_dir: '" + f + "' has part label " + std::to_string(lbl));
        }
      }
    }
    ds.clouds.push_back(std::move(cloud));
  }
  return ds;
}

}  // namespace socnn
