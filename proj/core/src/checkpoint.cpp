// Checkpoint layout (all integers little-endian):
//
//   "MSFFCKPT"                      8 bytes
//   version                         u32
//   header length                   u64
//   header                          UTF-8 JSON
//   tensor count                    u32
//   per tensor:
//     name length, name             u32, bytes
//     rank, dims                    u32, u32[rank]
//     values                        f32[prod(dims)]
//   "MSFFEND!"                      8 bytes

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "msff/json_io.hpp"
#include "msff/training.hpp"

namespace msff {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic{'M', 'S', 'F', 'F', 'C', 'K', 'P', 'T'};
constexpr std::array<char, 8> kTrailer{'M', 'S', 'F', 'F', 'E', 'N', 'D', '!'};
constexpr std::uint32_t kMaxRank = 8;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  template <typename U>
  void integer(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { integer(std::bit_cast<std::uint32_t>(v)); }
  const std::vector<char>& data() const { return buffer_; }

 private:
  std::vector<char> buffer_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  void bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U integer(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(integer<std::uint32_t>(what)); }
  std::size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw FormatError(path_, field, what);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(what, "file is truncated");
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string path_;
};

void write_tensor(Writer& w, const std::string& name, const nn::Parameter<float>& p) {
  w.integer(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.integer(static_cast<std::uint32_t>(p.shape.size()));
  for (int d : p.shape) w.integer(static_cast<std::uint32_t>(d));
  for (float v : p.values) w.f32(v);
}

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& path) {
  Json header{{"model_config", to_json(state.model_config)},
              {"train_config", to_json(state.train_config)},
              {"step", state.step},
              {"epoch", state.epoch},
              {"optimizer", to_string(state.optimizer.kind)},
              {"optimizer_t", state.optimizer.t},
              {"rng_state", state.rng_state},
              {"loss_history", state.loss_history}};
  const std::string text = header.dump();

  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.integer(kCheckpointVersion);
  w.integer(static_cast<std::uint64_t>(text.size()));
  w.bytes(text.data(), text.size());

  std::vector<std::pair<std::string, const nn::Parameter<float>*>> tensors;
  for (const auto& [name, p] : state.params.tensors) tensors.emplace_back("param/" + name, &p);
  for (const auto& [name, p] : state.optimizer.first.tensors) tensors.emplace_back("opt.first/" + name, &p);
  for (const auto& [name, p] : state.optimizer.second.tensors) tensors.emplace_back("opt.second/" + name, &p);
  w.integer(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, p] : tensors) write_tensor(w, name, *p);
  w.bytes(kTrailer.data(), kTrailer.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

TrainState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kMagic) r.fail("magic", "not a checkpoint file");
  const auto version = r.integer<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    r.fail("version", "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = r.integer<std::uint64_t>("header");
  if (header_len > r.remaining()) r.fail("header", "file is truncated");
  std::string text(header_len, '\0');
  r.bytes(text.data(), header_len, "header");

  TrainState state;
  try {
    const Json header = Json::parse(text);
    update_from_json(state.model_config, header.at("model_config"), "model_config");
    update_from_json(state.train_config, header.at("train_config"), "train_config");
    state.step = header.at("step").get<int>();
    state.epoch = header.at("epoch").get<int>();
    state.optimizer.kind = state.train_config.optimizer;
    if (header.at("optimizer").get<std::string>() != to_string(state.optimizer.kind)) {
      r.fail("optimizer", "optimizer kind disagrees with train_config");
    }
    state.optimizer.t = header.at("optimizer_t").get<std::int64_t>();
    state.rng_state = header.at("rng_state").get<std::string>();
    state.loss_history = header.at("loss_history").get<std::vector<double>>();
  } catch (const Json::exception& e) {
    r.fail("header", e.what());
  } catch (const ConfigError& e) {
    r.fail(e.field(), e.what());
  }

  const auto count = r.integer<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.integer<std::uint32_t>("tensor name");
    if (name_len > r.remaining()) r.fail("tensor name", "file is truncated");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "tensor name");
    const auto rank = r.integer<std::uint32_t>(name.c_str());
    if (rank > kMaxRank) r.fail(name, "implausible tensor rank");
    nn::Parameter<float> p;
    std::uint64_t size = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.integer<std::uint32_t>(name.c_str());
      p.shape.push_back(static_cast<int>(dim));
      size *= dim;
    }
    if (size * 4 > r.remaining()) r.fail(name, "file is truncated");
    p.values.resize(size);
    for (float& v : p.values) v = r.f32(name.c_str());

    const auto slash = name.find('/');
    const std::string group = name.substr(0, slash);
    const std::string key = slash == std::string::npos ? "" : name.substr(slash + 1);
    if (group == "param") {
      state.params.tensors[key] = std::move(p);
    } else if (group == "opt.first") {
      state.optimizer.first.tensors[key] = std::move(p);
    } else if (group == "opt.second") {
      state.optimizer.second.tensors[key] = std::move(p);
    } else {
      r.fail(name, "unknown tensor group");
    }
  }
  std::array<char, 8> trailer{};
  r.bytes(trailer.data(), trailer.size(), "trailer");
  if (trailer != kTrailer) r.fail("trailer", "bad end marker");

  try {
    check_params(state.params, state.model_config);
  } catch (const ConfigError& e) {
    r.fail(e.field(), e.what());
  }
  return state;
}

TrainState load_checkpoint(const fs::path& path, const ModelConfig& expected) {
  TrainState state = load_checkpoint(path);
  if (!(state.model_config == expected)) {
    const Json stored = to_json(state.model_config);
    const Json wanted = to_json(expected);
    for (const auto& [key, value] : stored.items()) {
      if (wanted.at(key) != value) {
        throw ConfigError("model." + key, "checkpoint " + path.string() + " was trained with " +
                                              value.dump() + ", requested " + wanted.at(key).dump());
      }
    }
    throw ConfigError("model", "checkpoint config differs from the requested model");
  }
  return state;
}

}  // namespace msff
