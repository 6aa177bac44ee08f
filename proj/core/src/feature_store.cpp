#include "pmce/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "pmce/binary_io.hpp"
#include "pmce/error.hpp"

namespace pmce {

namespace fs = std::filesystem;
using nlohmann::json;

bool operator==(const FeatureRecord& a, const FeatureRecord& b) {
  return a.class_id == b.class_id && a.visual.size() == b.visual.size() &&
         a.caption_emb.size() == b.caption_emb.size() && a.visual == b.visual &&
         a.caption_emb == b.caption_emb;
}

bool operator==(const DatasetSplit& a, const DatasetSplit& b) {
  return a.name == b.name && a.class_names == b.class_names &&
         a.name_embs.rows() == b.name_embs.rows() && a.name_embs.cols() == b.name_embs.cols() &&
         a.name_embs == b.name_embs && a.records == b.records;
}

std::size_t DatasetSplit::d_v() const {
  return records.empty() ? 0 : static_cast<std::size_t>(records.front().visual.size());
}

std::vector<std::vector<std::size_t>> DatasetSplit::records_by_class() const {
  std::vector<std::vector<std::size_t>> out(num_classes());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto id = records[i].class_id;
    if (id >= out.size()) {
      throw InvalidArgument("split '" + name + "': record " + std::to_string(i) + " has class id " +
                            std::to_string(id) + " >= " + std::to_string(out.size()));
    }
    out[id].push_back(i);
  }
  return out;
}

void DatasetSplit::validate() const {
  if (std::find(std::begin(kSplitNames), std::end(kSplitNames), name) == std::end(kSplitNames)) {
    throw InvalidArgument("unknown split name '" + name + "'");
  }
  if (static_cast<std::size_t>(name_embs.rows()) != class_names.size()) {
    throw DimensionError("split '" + name + "': " + std::to_string(name_embs.rows()) +
                         " name embeddings for " + std::to_string(class_names.size()) + " classes");
  }
  if (records.empty()) throw InvalidArgument("split '" + name + "' has no records");
  const auto dv = d_v();
  const auto dt = d_t();
  if (dv == 0 || dt == 0) throw DimensionError("split '" + name + "': zero embedding dimension");
  if (!name_embs.allFinite()) throw NumericError("split '" + name + "': non-finite name embedding");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (static_cast<std::size_t>(r.visual.size()) != dv ||
        static_cast<std::size_t>(r.caption_emb.size()) != dt) {
      throw DimensionError("split '" + name + "': record " + std::to_string(i) +
                           " has inconsistent dimensions");
    }
    if (!r.visual.allFinite() || !r.caption_emb.allFinite()) {
      throw NumericError("split '" + name + "': record " + std::to_string(i) +
                         " contains NaN or Inf");
    }
  }
  const auto groups = records_by_class();
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (groups[c].empty()) {
      throw InvalidArgument("split '" + name + "': class " + std::to_string(c) + " ('" +
                            class_names[c] + "') has no records");
    }
  }
}

const DatasetSplit& Store::split(std::string_view name) const {
  for (const auto& s : splits) {
    if (s.name == name) return s;
  }
  throw InvalidArgument("store has no split '" + std::string(name) + "'");
}

bool Store::has_split(std::string_view name) const {
  return std::any_of(splits.begin(), splits.end(), [&](const auto& s) { return s.name == name; });
}

Bytes encode_records(const DatasetSplit& split) {
  ByteWriter w;
  for (const auto& r : split.records) {
    w.put_u32(r.class_id);
    for (float x : r.visual) w.put_f32(x);
    for (float x : r.caption_emb) w.put_f32(x);
  }
  return w.take();
}

Bytes encode_names(const DatasetSplit& split) {
  ByteWriter w;
  for (Eigen::Index i = 0; i < split.name_embs.rows(); ++i) {
    for (Eigen::Index j = 0; j < split.name_embs.cols(); ++j) w.put_f32(split.name_embs(i, j));
  }
  return w.take();
}

StoreManifest write_store(std::span<const DatasetSplit> splits, const fs::path& dir) {
  if (splits.empty()) throw InvalidArgument("write_store: no splits given");
  StoreManifest manifest;
  manifest.d_v = splits.front().d_v();
  manifest.d_t = splits.front().d_t();
  for (const auto& s : splits) {
    s.validate();
    if (s.d_v() != manifest.d_v || s.d_t() != manifest.d_t) {
      throw DimensionError("write_store: split '" + s.name + "' has d_v=" + std::to_string(s.d_v()) +
                           ", d_t=" + std::to_string(s.d_t()) + " but store uses d_v=" +
                           std::to_string(manifest.d_v) + ", d_t=" + std::to_string(manifest.d_t));
    }
    if (manifest.splits.count(s.name)) throw InvalidArgument("write_store: duplicate split '" + s.name + "'");
    manifest.splits[s.name] = {};
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json jsplits = json::object();
  for (const auto& s : splits) {
    const auto records = encode_records(s);
    const auto names = encode_names(s);
    write_file(dir / (s.name + ".records"), records);
    write_file(dir / (s.name + ".names"), names);

    SplitSummary summary{s.num_classes(), s.records.size(), s.class_names, fnv1a64_hex(records),
                         fnv1a64_hex(names)};
    jsplits[s.name] = {{"num_classes", summary.num_classes},
                       {"num_records", summary.num_records},
                       {"class_names", summary.class_names},
                       {"records_fnv1a", summary.records_fnv1a},
                       {"names_fnv1a", summary.names_fnv1a}};
    manifest.splits[s.name] = std::move(summary);
  }

  json j = {{"version", manifest.version}, {"d_v", manifest.d_v}, {"d_t", manifest.d_t}, {"splits", jsplits}};
  const auto text = j.dump(2) + "\n";
  write_file(dir / "manifest.json",
             std::span(reinterpret_cast<const std::byte*>(text.data()), text.size()));
  return manifest;
}

namespace {

StoreManifest parse_manifest(const fs::path& path) {
  const auto raw = read_file(path);
  json j;
  try {
    j = json::parse(reinterpret_cast<const char*>(raw.data()),
                    reinterpret_cast<const char*>(raw.data()) + raw.size());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    StoreManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kStoreVersion) {
      throw FormatError(path.string() + ": unknown store version " + std::to_string(m.version));
    }
    m.d_v = j.at("d_v").get<std::size_t>();
    m.d_t = j.at("d_t").get<std::size_t>();
    if (m.d_v == 0 || m.d_t == 0) throw FormatError(path.string() + ": zero dimension");
    for (const auto& [name, js] : j.at("splits").items()) {
      SplitSummary s;
      s.num_classes = js.at("num_classes").get<std::size_t>();
      s.num_records = js.at("num_records").get<std::size_t>();
      s.class_names = js.at("class_names").get<std::vector<std::string>>();
      s.records_fnv1a = js.at("records_fnv1a").get<std::string>();
      s.names_fnv1a = js.at("names_fnv1a").get<std::string>();
      if (s.class_names.size() != s.num_classes) {
        throw FormatError(path.string() + ": split '" + name + "' class_names length mismatch");
      }
      m.splits[name] = std::move(s);
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void verify_checksum(const Bytes& bytes, const std::string& expected, const fs::path& path) {
  const auto actual = fnv1a64_hex(bytes);
  if (actual != expected) {
    throw ChecksumError(path.string() + ": checksum mismatch (manifest " + expected + ", file " + actual + ")");
  }
}

}  // namespace

Store read_store(const fs::path& dir) {
  Store store;
  store.manifest = parse_manifest(dir / "manifest.json");
  const auto& m = store.manifest;
  const std::size_t record_bytes = 4 + 4 * (m.d_v + m.d_t);

  for (auto name_view : kSplitNames) {
    const std::string name(name_view);
    auto it = m.splits.find(name);
    if (it == m.splits.end()) continue;
    const auto& summary = it->second;

    const auto records_path = dir / (name + ".records");
    const auto names_path = dir / (name + ".names");
    const auto records_raw = read_file(records_path);
    const auto names_raw = read_file(names_path);
    verify_checksum(records_raw, summary.records_fnv1a, records_path);
    verify_checksum(names_raw, summary.names_fnv1a, names_path);
    if (records_raw.size() != summary.num_records * record_bytes) {
      throw FormatError(records_path.string() + ": size " + std::to_string(records_raw.size()) +
                        " does not match " + std::to_string(summary.num_records) + " records");
    }
    if (names_raw.size() != summary.num_classes * m.d_t * 4) {
      throw FormatError(names_path.string() + ": size does not match class count");
    }

    DatasetSplit split;
    split.name = name;
    split.class_names = summary.class_names;
    split.name_embs.resize(static_cast<Eigen::Index>(summary.num_classes), static_cast<Eigen::Index>(m.d_t));
    ByteReader names(names_raw, names_path.string());
    for (Eigen::Index i = 0; i < split.name_embs.rows(); ++i) {
      for (Eigen::Index j = 0; j < split.name_embs.cols(); ++j) split.name_embs(i, j) = names.get_f32();
    }
    if (!split.name_embs.allFinite()) {
      throw NumericError(names_path.string() + ": non-finite class-name embedding");
    }

    ByteReader rec(records_raw, records_path.string());
    split.records.reserve(summary.num_records);
    for (std::size_t i = 0; i < summary.num_records; ++i) {
      FeatureRecord r;
      r.class_id = rec.get_u32();
      r.visual.resize(static_cast<Eigen::Index>(m.d_v));
      r.caption_emb.resize(static_cast<Eigen::Index>(m.d_t));
      for (auto& x : r.visual) x = rec.get_f32();
      for (auto& x : r.caption_emb) x = rec.get_f32();
      if (!r.visual.allFinite() || !r.caption_emb.allFinite()) {
        throw NumericError(records_path.string() + ": record " + std::to_string(i) + " contains NaN or Inf");
      }
      if (r.class_id >= summary.num_classes) {
        throw FormatError(records_path.string() + ": record " + std::to_string(i) + " has class id " +
                          std::to_string(r.class_id) + " >= " + std::to_string(summary.num_classes));
      }
      split.records.push_back(std::move(r));
    }
    split.validate();
    store.splits.push_back(std::move(split));
  }
  for (const auto& [name, _] : m.splits) {
    if (!store.has_split(name)) throw FormatError("manifest lists unknown split '" + name + "'");
  }
  return store;
}

}  // namespace pmce
