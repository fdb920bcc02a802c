#include "filter/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "config_io.hpp"
#include "filter/errors.hpp"

namespace filter {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

void write_f64(std::ostream& out, double v) {
  write_u64(out, std::bit_cast<std::uint64_t>(v));
}

void read_exact(std::istream& in, char* dst, std::size_t n,
                const std::string& path) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw DataError("truncated checkpoint: " + path);
  }
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  char b[4];
  read_exact(in, b, 4, path);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
  return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  char b[8];
  read_exact(in, b, 8, path);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
  return v;
}

double read_f64(std::istream& in, const std::string& path) {
  return std::bit_cast<double>(read_u64(in, path));
}

struct Header {
  CheckpointMeta meta;
  std::uint64_t n_params = 0;
};

Header read_header(std::istream& in, const std::string& path) {
  char magic[8];
  read_exact(in, magic, 8, path);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint32_t meta_len = read_u32(in, path);
  std::string meta_text(meta_len, '\0');
  read_exact(in, meta_text.data(), meta_len, path);

  nlohmann::json meta_json;
  try {
    meta_json = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint metadata in " + path + ": " + e.what());
  }

  Header header;
  try {
    detail::require_keys(meta_json, {"config", "phase", "seed"},
                         "checkpoint metadata");
    if (!meta_json.contains("config")) {
      throw ConfigError("checkpoint metadata: missing \"config\"");
    }
    header.meta.config = detail::filter_config_from_json(
        meta_json.at("config"), "checkpoint config");
    header.meta.seed =
        detail::json_u64(meta_json, "seed", 0, "checkpoint metadata");
    header.meta.phase =
        detail::json_string(meta_json, "phase", "", "checkpoint metadata");
  } catch (const ConfigError& e) {
    throw DataError("bad checkpoint metadata in " + path + ": " + e.what());
  }
  header.n_params = read_u64(in, path);
  return header;
}

}  // namespace

void save_checkpoint(const std::string& path, const FilterModel& model,
                     std::uint64_t seed, const std::string& phase) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot open checkpoint for writing: " + path);
  }

  nlohmann::json meta;
  meta["config"] = detail::filter_config_to_json(model.config());
  meta["phase"] = phase;
  meta["seed"] = seed;
  const std::string meta_text = meta.dump();

  out.write(kMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  const auto params = model.named_parameters();
  write_u64(out, params.size());
  for (const auto& [name, tensor] : params) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(tensor.rows()));
    write_u32(out, static_cast<std::uint32_t>(tensor.cols()));
    for (double v : tensor.values()) write_f64(out, v);
  }
  if (!out) {
    throw DataError("failed writing checkpoint: " + path);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open checkpoint: " + path);
  }
  Header header = read_header(in, path);

  struct Stored {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
  };
  std::map<std::string, Stored> stored;
  for (std::uint64_t i = 0; i < header.n_params; ++i) {
    std::uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    read_exact(in, name.data(), name_len, path);
    Stored s;
    s.rows = static_cast<int>(read_u32(in, path));
    s.cols = static_cast<int>(read_u32(in, path));
    s.values.resize(static_cast<std::size_t>(s.rows) * s.cols);
    for (double& v : s.values) v = read_f64(in, path);
    if (!stored.emplace(name, std::move(s)).second) {
      throw DataError("duplicate parameter \"" + name + "\" in " + path);
    }
  }

  LoadedCheckpoint result;
  result.meta = header.meta;
  result.model =
      std::make_unique<FilterModel>(header.meta.config, header.meta.seed);

  std::uint64_t values = 0;
  auto params = result.model->named_parameters();
  if (params.size() != stored.size()) {
    throw DataError("checkpoint parameter set does not match model: " + path);
  }
  for (auto& [name, tensor] : params) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      throw DataError("checkpoint missing parameter \"" + name + "\": " +
                      path);
    }
    const Stored& s = it->second;
    if (s.rows != tensor.rows() || s.cols != tensor.cols()) {
      throw DataError("parameter \"" + name + "\" has shape " +
                      std::to_string(s.rows) + "x" + std::to_string(s.cols) +
                      ", expected " + tensor.shape_str() + ": " + path);
    }
    std::span<double> dst = tensor.values_mut();
    std::memcpy(dst.data(), s.values.data(),
                s.values.size() * sizeof(double));
    values += s.values.size();
  }
  result.meta.parameter_count = params.size();
  result.meta.value_count = values;
  return result;
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open checkpoint: " + path);
  }
  Header header = read_header(in, path);
  CheckpointMeta meta = header.meta;
  meta.parameter_count = header.n_params;
  for (std::uint64_t i = 0; i < header.n_params; ++i) {
    std::uint32_t name_len = read_u32(in, path);
    in.seekg(name_len, std::ios::cur);
    std::uint64_t rows = read_u32(in, path);
    std::uint64_t cols = read_u32(in, path);
    meta.value_count += rows * cols;
    in.seekg(static_cast<std::streamoff>(rows * cols * 8), std::ios::cur);
    if (!in) {
      throw DataError("truncated checkpoint: " + path);
    }
  }
  return meta;
}

}  // namespace filter
