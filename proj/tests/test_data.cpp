#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "socnn/checkpoint.hpp"
#include "socnn/data.hpp"
#include "socnn/socnn.hpp"

using namespace socnn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("socnn_test_" + std::to_string(Rng(std::random_device{}()).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("generate_primitive_cloud: sphere lies on the unit sphere after normalization") {
  SyntheticShapeSpec spec;
  spec.family = ShapeFamily::kSphere;
  spec.n_points = 128;
  spec.noise_sigma = 0.0;
  spec.seed = 5;
  auto cloud = generate_primitive_cloud(spec);
  CHECK(cloud.num_points() == 128);
  CHECK(cloud.object_label == static_cast<int>(ShapeFamily::kSphere));
  for (const auto& p : cloud.coords) {
    const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("generate_primitive_cloud: counts, label ranges, determinism") {
  for (int f = 0; f <= static_cast<int>(ShapeFamily::kCubeOnCylinder); ++f) {
    SyntheticShapeSpec spec;
    spec.family = static_cast<ShapeFamily>(f);
    spec.n_points = 97;
    spec.noise_sigma = 0.01;
    spec.seed = 11 + static_cast<uint64_t>(f);
    auto a = generate_primitive_cloud(spec);
    auto b = generate_primitive_cloud(spec);
    CHECK(a.num_points() == 97);
    CHECK(a.coords == b.coords);  // bitwise determinism
    const bool composite = f >= static_cast<int>(ShapeFamily::kSphereOnCylinder);
    CHECK(a.has_point_labels() == composite);
    if (composite) {
      int zeros = 0, ones = 0;
      for (int lbl : a.point_labels) {
        CHECK(lbl >= 0);
        CHECK(lbl <= 1);
        zeros += lbl == 0;
        ones += lbl == 1;
      }
      CHECK(zeros > 0);
      CHECK(ones > 0);
    }
  }
}

TEST_CASE("cloud text round trip preserves coordinates and labels") {
  TempDir tmp;
  SyntheticShapeSpec spec;
  spec.family = ShapeFamily::kConeOnCylinder;
  spec.n_points = 64;
  spec.noise_sigma = 0.02;
  spec.seed = 3;
  auto cloud = generate_primitive_cloud(spec);
  const std::string path = tmp.file("cloud.txt");
  save_cloud(path, cloud);
  auto loaded = load_cloud(path);
  REQUIRE(loaded.num_points() == cloud.num_points());
  CHECK(loaded.object_label == cloud.object_label);
  CHECK(loaded.point_labels == cloud.point_labels);
  for (int i = 0; i < cloud.num_points(); ++i) {
    for (int d = 0; d < 3; ++d) {
      CHECK(std::abs(loaded.coords[static_cast<size_t>(i)][static_cast<size_t>(d)] -
                     cloud.coords[static_cast<size_t>(i)][static_cast<size_t>(d)]) < 1e-9);
    }
  }
}

TEST_CASE("load_cloud parse errors name the line") {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("bad.txt"));
    out << "0.1 0.2 0.3\n";
    out << "1.0 2.0\n";
  }
  try {
    load_cloud(tmp.file("bad.txt"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  {
    std::ofstream out(tmp.file("empty.txt"));
  }
  CHECK_THROWS_WITH_AS(load_cloud(tmp.file("empty.txt")),
                       doctest::Contains("no points"), ParseError);
  CHECK_THROWS_AS(load_cloud(tmp.file("missing.txt")), IoError);

  {
    std::ofstream out(tmp.file("mixed.txt"));
    out << "0 0 0 1\n0 0 1\n";
  }
  CHECK_THROWS_AS(load_cloud(tmp.file("mixed.txt")), ParseError);

  {
    std::ofstream out(tmp.file("nan.txt"));
    out << "0 zero 0\n";
  }
  CHECK_THROWS_AS(load_cloud(tmp.file("nan.txt")), ParseError);
}

TEST_CASE("dataset_split: degenerate fractions, exhaustiveness, determinism") {
  std::vector<int> items(100);
  std::iota(items.begin(), items.end(), 0);
  auto all_train = dataset_split(items, {1.0, 0.0, 0.0}, 9);
  CHECK(all_train.train.size() == 100);
  CHECK(all_train.val.empty());
  CHECK(all_train.test.empty());

  auto split = dataset_split(items, {0.7, 0.1, 0.2}, 10);
  CHECK(split.train.size() == 70);
  CHECK(split.val.size() == 10);
  CHECK(split.test.size() == 20);
  std::vector<int> merged;
  for (auto* part : {&split.train, &split.val, &split.test}) {
    merged.insert(merged.end(), part->begin(), part->end());
  }
  std::sort(merged.begin(), merged.end());
  CHECK(merged == items);

  auto again = dataset_split(items, {0.7, 0.1, 0.2}, 10);
  CHECK(again.train == split.train);
  CHECK(again.test == split.test);

  CHECK_THROWS_AS(dataset_split(items, {0.5, 0.1, 0.2}, 1), ValueError);
  CHECK_THROWS_AS(dataset_split(items, {1.2, -0.2, 0.0}, 1), ValueError);
}

TEST_CASE("accuracy and mIoU basics") {
  CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(accuracy({1, 2, 3}, {1, 0, 3}) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(accuracy({1}, {1, 2}), ShapeError);

  // Perfect prediction.
  std::vector<std::vector<int>> preds = {{0, 0, 1, 1}};
  std::vector<std::vector<int>> labels = {{0, 0, 1, 1}};
  CHECK(miou(preds, labels, {0}, {{0, 1}}) == 1.0);

  // All part-0 predictions against a half/half ground truth: (0.5 + 0)/2.
  std::vector<std::vector<int>> all0 = {{0, 0, 0, 0}};
  std::vector<std::vector<int>> half = {{0, 0, 1, 1}};
  CHECK(miou(all0, half, {0}, {{0, 1}}) == doctest::Approx(0.25));

  // A part absent from both contributes IoU 1.
  CHECK(shape_iou({0, 0}, {0, 0}, {0, 1}) == 1.0);
  CHECK_THROWS_AS(miou(preds, labels, {5}, {{0, 1}}), ValueError);
}

TEST_CASE("mIoU agrees with the set-arithmetic oracle on random cases") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> preds(40), labels(40);
    for (auto& v : preds) v = rng.uniform_int(4);
    for (auto& v : labels) v = rng.uniform_int(4);
    const std::vector<int> parts = {0, 1, 2, 3};
    CHECK(shape_iou(preds, labels, parts) ==
          doctest::Approx(oracle::set_arithmetic_shape_iou(preds, labels, parts)).epsilon(1e-12));
  }
}

TEST_CASE("mIoU is invariant under consistent part relabeling") {
  Rng rng(22);
  std::vector<int> preds(30), labels(30);
  for (auto& v : preds) v = rng.uniform_int(2);
  for (auto& v : labels) v = rng.uniform_int(2);
  const double base = shape_iou(preds, labels, {0, 1});
  // Swap labels 0 and 1 in both.
  std::vector<int> preds_sw = preds, labels_sw = labels;
  for (auto& v : preds_sw) v = 1 - v;
  for (auto& v : labels_sw) v = 1 - v;
  CHECK(shape_iou(preds_sw, labels_sw, {0, 1}) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("datasets: class balance and segmentation label layout") {
  auto cls = make_classification_dataset(25, 32, 0.01, 31);
  CHECK(cls.size() == 25);
  CHECK(cls.num_classes == 6);
  for (const auto& c : cls.clouds) {
    CHECK(c.object_label >= 0);
    CHECK(c.object_label < 6);
    CHECK_FALSE(c.has_point_labels());
  }
  auto seg = make_segmentation_dataset(9, 48, 0.01, 32);
  CHECK(seg.num_parts == 6);
  CHECK(seg.parts_per_category.size() == 3);
  for (const auto& c : seg.clouds) {
    CHECK(c.object_label >= 0);
    CHECK(c.object_label < 3);
    for (int lbl : c.point_labels) {
      CHECK(lbl / 2 == c.object_label);  // global part id = 2*cat + {0,1}
    }
  }
}

TEST_CASE("dataset directory round trip") {
  TempDir tmp;
  auto train = make_classification_dataset(8, 24, 0.0, 41);
  auto val = make_classification_dataset(2, 24, 0.0, 42);
  auto test = make_classification_dataset(4, 24, 0.0, 43);
  save_dataset_dir(tmp.file("ds"), train, val, test);
  auto loaded = load_dataset_split_dir(tmp.file("ds") + "/train", Task::kClassification);
  CHECK(loaded.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(loaded.clouds[static_cast<size_t>(i)].object_label == train.clouds[static_cast<size_t>(i)].object_label);
  }
  CHECK_THROWS_AS(load_dataset_split_dir(tmp.file("nowhere"), Task::kClassification), IoError);
}

TEST_CASE("checkpoint: bitwise round trip through save/load and forward") {
  TempDir tmp;
  SOCNNConfig cfg = SOCNNConfig::tiny_plan();
  cfg.num_classes = 4;
  cfg.num_parts = 0;
  ParamStore<double> ps;
  Rng rng(51);
  init_socnn_params(ps, cfg, rng);
  // Mutate running stats so buffers carry non-initial values.
  auto cloud_set = make_classification_dataset(3, 32, 0.01, 52);
  {
    AdamState<double> adam;
    TrainOptions opts;
    opts.epochs = 1;
    opts.batch_size = 3;
    opts.lr = 1e-3;
    opts.augment = false;
    Dataset small = cloud_set;
    small.num_classes = 4;
    train_epoch(ps, adam, small, cfg, opts, 0);
  }

  auto eval_logits = [&](ParamStore<double>& store) {
    ForwardCtx<double> ctx = ForwardCtx<double>::eval();
    auto trace = backbone_forward(store, cfg, cloud_set.clouds[0], ctx);
    return classification_head(store, cfg, trace.signature, ctx).values();
  };
  const auto before = eval_logits(ps);

  const std::string path = tmp.file("model.ckpt");
  save_model(path, ps, cfg);
  auto loaded = load_model<double>(path);
  CHECK(loaded.config.num_classes == 4);
  const auto after = eval_logits(loaded.params);
  CHECK(before == after);  // bitwise

  for (const auto& name : ps.param_names()) {
    CHECK(ps.at(name).values() == loaded.params.at(name).values());
  }
  for (const auto& name : ps.buffer_names()) {
    CHECK(ps.at(name).values() == loaded.params.at(name).values());
  }
}

TEST_CASE("checkpoint: corruption, truncation, version and magic errors") {
  TempDir tmp;
  SOCNNConfig cfg = SOCNNConfig::tiny_plan();
  cfg.num_classes = 2;
  ParamStore<double> ps;
  Rng rng(61);
  init_socnn_params(ps, cfg, rng);
  const std::string path = tmp.file("model.ckpt");
  save_model(path, ps, cfg);

  auto read_bytes = [&]() {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  auto write_bytes = [&](const std::string& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };
  const auto bytes = read_bytes();

  // Truncated: integrity check must fail, nothing partial returned.
  write_bytes(tmp.file("trunc.ckpt"), std::vector<char>(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2)));
  CHECK_THROWS_WITH_AS(read_checkpoint<double>(tmp.file("trunc.ckpt")),
                       doctest::Contains("integrity"), CheckpointError);

  // Flipped payload byte: corruption.
  auto corrupt = bytes;
  corrupt[bytes.size() / 2] ^= 0x40;
  write_bytes(tmp.file("corrupt.ckpt"), corrupt);
  CHECK_THROWS_AS(read_checkpoint<double>(tmp.file("corrupt.ckpt")), CheckpointError);

  // Bumped version field (first payload bytes after the 8-byte magic).
  auto vbump = bytes;
  vbump[8] = 9;
  write_bytes(tmp.file("version.ckpt"), vbump);
  CHECK_THROWS_WITH_AS(read_checkpoint<double>(tmp.file("version.ckpt")),
                       doctest::Contains("version"), CheckpointError);

  // Wrong magic.
  auto magic = bytes;
  magic[0] = 'X';
  write_bytes(tmp.file("magic.ckpt"), magic);
  CHECK_THROWS_WITH_AS(read_checkpoint<double>(tmp.file("magic.ckpt")),
                       doctest::Contains("not a checkpoint"), CheckpointError);

  // Precision mismatch: written as f64, read as f32.
  CHECK_THROWS_WITH_AS(read_checkpoint<float>(path), doctest::Contains("precision"), CheckpointError);
}
