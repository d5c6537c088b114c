#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "socnn/param_store.hpp"
#include "socnn/rng.hpp"
#include "socnn/socnn.hpp"

namespace socnn {

// Binary container: 8-byte magic, little-endian payload (version, config
// JSON, named raw tensors), FNV-1a 64 checksum trailer over the payload.
inline constexpr char kCheckpointMagic[8] = {'S', 'O', 'C', 'N', 'N', 'C', 'P', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline uint64_t fnv1a64(const char* data, size_t len) {
  uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename V>
void append_raw(std::vector<char>& buf, const V& value) {
  const size_t at = buf.size();
  buf.resize(at + sizeof(V));
  std::memcpy(buf.data() + at, &value, sizeof(V));
}

inline void append_bytes(std::vector<char>& buf, const void* data, size_t len) {
  const size_t at = buf.size();
  buf.resize(at + len);
  std::memcpy(buf.data() + at, data, len);
}

class Reader {
 public:
  Reader(const char* data, size_t len) : data_(data), len_(len) {}
  template <typename V>
  V read() {
    V v;
    take(&v, sizeof(V));
    return v;
  }
  std::string read_string(size_t len) {
    std::string s(len, '\0');
    take(s.data(), len);
    return s;
  }
  void take(void* out, size_t len) {
    if (pos_ + len > len_) throw CheckpointError("checkpoint payload ended unexpectedly");
    std::memcpy(out, data_ + pos_, len);
    pos_ += len;
  }
  bool exhausted() const { return pos_ == len_; }

 private:
  const char* data_;
  size_t len_;
  size_t pos_ = 0;
};

template <typename T>
constexpr uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 4 : 8;
}

}  // namespace detail

template <typename T>
void checkpoint_save(const std::string& path, const ParamStore<T>& params,
                     const nlohmann::json& config) {
  std::vector<char> payload;
  detail::append_raw(payload, kCheckpointVersion);
  const std::string config_str = config.dump();
  detail::append_raw(payload, static_cast<uint64_t>(config_str.size()));
  detail::append_bytes(payload, config_str.data(), config_str.size());

  const auto emit = [&payload](const std::string& name, const Tensor<T>& t, uint8_t kind) {
    detail::append_raw(payload, static_cast<uint32_t>(name.size()));
    detail::append_bytes(payload, name.data(), name.size());
    detail::append_raw(payload, kind);
    detail::append_raw(payload, detail::dtype_tag<T>());
    detail::append_raw(payload, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) detail::append_raw(payload, static_cast<int64_t>(d));
    detail::append_raw(payload, static_cast<uint64_t>(t.values().size() * sizeof(T)));
    detail::append_bytes(payload, t.values().data(), t.values().size() * sizeof(T));
  };
  const uint32_t count =
      static_cast<uint32_t>(params.param_names().size() + params.buffer_names().size());
  detail::append_raw(payload, count);
  for (const auto& name : params.param_names()) emit(name, params.at(name), 1);
  for (const auto& name : params.buffer_names()) emit(name, params.at(name), 0);

  const uint64_t checksum = detail::fnv1a64(payload.data(), payload.size());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("checkpoint_save: cannot open '" + tmp + "'");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    if (!out) throw IoError("checkpoint_save: write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
struct CheckpointContents {
  nlohmann::json config;
  struct Entry {
    std::string name;
    uint8_t kind = 1;  // 1 = parameter, 0 = buffer
    Shape shape;
    std::vector<T> values;
  };
  std::vector<Entry> tensors;
};

template <typename T>
CheckpointContents<T> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_checkpoint: cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kCheckpointMagic) + sizeof(uint32_t) + sizeof(uint64_t)) {
    throw CheckpointError("'" + path + "' is truncated");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint");
  }
  const char* payload = bytes.data() + sizeof(kCheckpointMagic);
  const size_t payload_len = bytes.size() - sizeof(kCheckpointMagic) - sizeof(uint64_t);

  detail::Reader reader(payload, payload_len);
  const uint32_t version = reader.read<uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  uint64_t stored_checksum;
  std::memcpy(&stored_checksum, bytes.data() + bytes.size() - sizeof(uint64_t), sizeof(uint64_t));
  if (detail::fnv1a64(payload, payload_len) != stored_checksum) {
    throw CheckpointError("'" + path + "' failed the integrity check (corrupt or truncated)");
  }

  CheckpointContents<T> contents;
  const uint64_t config_len = reader.read<uint64_t>();
  const std::string config_str = reader.read_string(config_len);
  try {
    contents.config = nlohmann::json::parse(config_str);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad config block: ") + e.what());
  }
  const uint32_t count = reader.read<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    typename CheckpointContents<T>::Entry entry;
    const uint32_t name_len = reader.read<uint32_t>();
    entry.name = reader.read_string(name_len);
    entry.kind = reader.read<uint8_t>();
    const uint8_t dtype = reader.read<uint8_t>();
    if (dtype != detail::dtype_tag<T>()) {
      throw CheckpointError("precision mismatch: checkpoint stores " +
                            std::to_string(dtype * 8) + "-bit tensors, engine runs " +
                            std::to_string(sizeof(T) * 8) + "-bit");
    }
    const uint32_t ndim = reader.read<uint32_t>();
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const int64_t dim = reader.read<int64_t>();
      entry.shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    const uint64_t byte_len = reader.read<uint64_t>();
    if (byte_len != static_cast<uint64_t>(numel) * sizeof(T)) {
      throw CheckpointError("tensor '" + entry.name + "' has inconsistent byte length");
    }
    entry.values.resize(static_cast<size_t>(numel));
    reader.take(entry.values.data(), byte_len);
    contents.tensors.push_back(std::move(entry));
  }
  if (!reader.exhausted()) throw CheckpointError("trailing bytes after checkpoint payload");
  return contents;
}

// Overwrites every tensor of an initialized store, requiring an exact
// name-set and shape match with the container.
template <typename T>
void restore_params(const CheckpointContents<T>& contents, ParamStore<T>& params) {
  const size_t expected = params.param_names().size() + params.buffer_names().size();
  if (contents.tensors.size() != expected) {
    throw CheckpointError("checkpoint holds " + std::to_string(contents.tensors.size()) +
                          " tensors, model expects " + std::to_string(expected));
  }
  for (const auto& entry : contents.tensors) {
    if (!params.has(entry.name)) {
      throw CheckpointError("checkpoint tensor '" + entry.name + "' is not part of the model");
    }
    Tensor<T>& t = params.at(entry.name);
    if (t.shape() != entry.shape) {
      throw CheckpointError("checkpoint tensor '" + entry.name + "' has shape " +
                            shape_str(entry.shape) + ", model expects " + shape_str(t.shape()));
    }
    t.mutable_values() = entry.values;
  }
}

template <typename T>
struct LoadedModel {
  SOCNNConfig config;
  ParamStore<T> params;
};

template <typename T>
LoadedModel<T> load_model(const std::string& path) {
  CheckpointContents<T> contents = read_checkpoint<T>(path);
  LoadedModel<T> model;
  model.config = SOCNNConfig::from_json(contents.config);
  Rng rng(0);
  init_socnn_params(model.params, model.config, rng);
  restore_params(contents, model.params);
  return model;
}

template <typename T>
void save_model(const std::string& path, const ParamStore<T>& params, const SOCNNConfig& config) {
  checkpoint_save(path, params, config.to_json());
}

}  // namespace socnn
