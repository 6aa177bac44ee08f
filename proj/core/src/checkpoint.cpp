#include "pmce/checkpoint.hpp"

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "pmce/binary_io.hpp"
#include "pmce/error.hpp"

namespace pmce {

using nlohmann::json;

namespace {

template <typename Ckpt, typename Fn>
void for_each_checkpoint_tensor(Ckpt& c, Fn&& fn) {
  for_each_tensor(c.enhancer.params, fn);
  if (c.classifier) {
    fn(std::string("classifier.w_c"), c.classifier->w_c.data(), c.classifier->w_c.rows(), c.classifier->w_c.cols());
    fn(std::string("classifier.b_c"), c.classifier->b_c.data(), c.classifier->b_c.size(), Eigen::Index{1});
  }
}

json config_json(const EnhancerConfig& cfg) {
  return {{"d_v", cfg.d_v}, {"d_t", cfg.d_t}, {"heads", cfg.heads}, {"d_k", cfg.d_k}, {"ln_eps", cfg.ln_eps}};
}

}  // namespace

Bytes encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.enhancer.config.validate();
  ckpt.enhancer.params.check_shapes(ckpt.enhancer.config);
  ByteWriter blob;
  json tensors = json::array();
  for_each_checkpoint_tensor(ckpt, [&](const std::string& name, const double* data, Eigen::Index r, Eigen::Index c) {
    tensors.push_back({{"name", name}, {"shape", {r, c}}});
    for (Eigen::Index i = 0; i < r * c; ++i) blob.put_f64(data[i]);
  });

  json header = {{"version", kCheckpointVersion},
                 {"config", config_json(ckpt.enhancer.config)},
                 {"seed", ckpt.seed},
                 {"has_classifier", ckpt.classifier.has_value()},
                 {"num_classes", ckpt.classifier ? ckpt.classifier->b_c.size() : 0},
                 {"tensors", tensors},
                 {"blob_bytes", blob.bytes().size()},
                 {"blob_fnv1a", fnv1a64_hex(blob.bytes())}};
  const auto text = header.dump();

  ByteWriter out;
  out.put_u64(text.size());
  out.put_string(text);
  out.put_bytes(blob.bytes());
  return out.take();
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes, const std::string& context) {
  ByteReader r(bytes, context);
  const auto header_len = r.get_u64();
  const auto header_bytes = r.get_bytes(static_cast<std::size_t>(header_len));
  json header;
  Checkpoint c;
  std::string blob_sum;
  std::size_t blob_bytes = 0;
  json tensors;
  try {
    header = json::parse(reinterpret_cast<const char*>(header_bytes.data()),
                         reinterpret_cast<const char*>(header_bytes.data()) + header_bytes.size());
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError(context + ": unknown checkpoint version " + std::to_string(version));
    }
    const auto& jc = header.at("config");
    auto& cfg = c.enhancer.config;
    cfg.d_v = jc.at("d_v").get<int>();
    cfg.d_t = jc.at("d_t").get<int>();
    cfg.heads = jc.at("heads").get<int>();
    cfg.d_k = jc.at("d_k").get<int>();
    cfg.ln_eps = jc.at("ln_eps").get<double>();
    c.seed = header.at("seed").get<std::uint64_t>();
    if (header.at("has_classifier").get<bool>()) {
      const int classes = header.at("num_classes").get<int>();
      if (classes < 1) throw FormatError(context + ": classifier without classes");
      c.classifier = ClassifierParams::zeros(cfg.d_v, classes);
    }
    tensors = header.at("tensors");
    blob_bytes = header.at("blob_bytes").get<std::size_t>();
    blob_sum = header.at("blob_fnv1a").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(context + ": bad header: " + e.what());
  }
  try {
    c.enhancer.config.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(context + ": " + e.what());
  }
  c.enhancer.params = EnhancerParams::zeros(c.enhancer.config);

  if (r.remaining() != blob_bytes) {
    throw FormatError(context + ": blob is " + std::to_string(r.remaining()) + " bytes, header says " +
                      std::to_string(blob_bytes));
  }
  const auto blob = r.get_bytes(blob_bytes);
  if (fnv1a64_hex(blob) != blob_sum) throw ChecksumError(context + ": blob checksum mismatch");

  ByteReader br(blob, context);
  std::size_t index = 0;
  for_each_checkpoint_tensor(c, [&](const std::string& name, double* data, Eigen::Index rows, Eigen::Index cols) {
    if (index >= tensors.size()) throw FormatError(context + ": header lists too few tensors");
    const auto& t = tensors[index++];
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    if (t.at("name").get<std::string>() != name || shape.size() != 2 || shape[0] != rows || shape[1] != cols) {
      throw FormatError(context + ": tensor " + std::to_string(index - 1) + " does not match expected " + name);
    }
    for (Eigen::Index i = 0; i < rows * cols; ++i) data[i] = br.get_f64();
  });
  if (index != tensors.size() || br.remaining() != 0) throw FormatError(context + ": unexpected extra tensors");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace pmce
