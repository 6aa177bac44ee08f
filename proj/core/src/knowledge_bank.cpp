#include "pmce/knowledge_bank.hpp"

#include <nlohmann/json.hpp>

#include "pmce/binary_io.hpp"
#include "pmce/error.hpp"

namespace pmce {

namespace fs = std::filesystem;
using nlohmann::json;

bool operator==(const KnowledgeBank& a, const KnowledgeBank& b) {
  return a.class_names == b.class_names && a.means.rows() == b.means.rows() &&
         a.means.cols() == b.means.cols() && a.name_embs.rows() == b.name_embs.rows() &&
         a.name_embs.cols() == b.name_embs.cols() && a.means == b.means && a.name_embs == b.name_embs;
}

void KnowledgeBank::validate() const {
  if (class_names.empty()) throw InvalidArgument("knowledge bank is empty");
  if (static_cast<std::size_t>(means.rows()) != size() || static_cast<std::size_t>(name_embs.rows()) != size()) {
    throw DimensionError("knowledge bank row counts disagree with class count");
  }
  if (!means.allFinite() || !name_embs.allFinite()) throw NumericError("knowledge bank has non-finite rows");
}

KnowledgeBank build_bank(const DatasetSplit& base) {
  base.validate();
  const auto groups = base.records_by_class();
  KnowledgeBank bank;
  bank.class_names = base.class_names;
  bank.name_embs = base.name_embs.cast<double>();
  bank.means.resize(static_cast<Eigen::Index>(base.num_classes()), static_cast<Eigen::Index>(base.d_v()));
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (groups[c].empty()) throw InvalidArgument("build_bank: class " + std::to_string(c) + " has no records");
    Vector acc = Vector::Zero(bank.means.cols());
    for (auto i : groups[c]) acc += base.records[i].visual.cast<double>();
    acc /= static_cast<double>(groups[c].size());
    bank.means.row(static_cast<Eigen::Index>(c)) = acc.cast<float>().cast<double>().transpose();
  }
  return bank;
}

namespace {

Bytes encode_rows(const Matrix& m) {
  ByteWriter w;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.put_f32(static_cast<float>(m(i, j)));
  }
  return w.take();
}

Matrix decode_rows(const Bytes& raw, std::size_t rows, std::size_t cols, const fs::path& path) {
  if (raw.size() != rows * cols * 4) {
    throw FormatError(path.string() + ": expected " + std::to_string(rows * cols * 4) + " bytes, found " +
                      std::to_string(raw.size()));
  }
  ByteReader r(raw, path.string());
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get_f32();
  }
  if (!m.allFinite()) throw NumericError(path.string() + ": non-finite values");
  return m;
}

}  // namespace

void save_bank(const KnowledgeBank& bank, const fs::path& dir) {
  bank.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const auto means = encode_rows(bank.means);
  const auto names = encode_rows(bank.name_embs);
  write_file(dir / "bank.means", means);
  write_file(dir / "bank.names_emb", names);
  json j = {{"version", kBankVersion},
            {"d_v", bank.d_v()},
            {"d_t", bank.d_t()},
            {"num_classes", bank.size()},
            {"class_names", bank.class_names},
            {"means_fnv1a", fnv1a64_hex(means)},
            {"names_emb_fnv1a", fnv1a64_hex(names)}};
  const auto text = j.dump(2) + "\n";
  write_file(dir / "bank.json", std::span(reinterpret_cast<const std::byte*>(text.data()), text.size()));
}

KnowledgeBank load_bank(const fs::path& dir) {
  const auto header_path = dir / "bank.json";
  const auto raw = read_file(header_path);
  json j;
  try {
    j = json::parse(reinterpret_cast<const char*>(raw.data()),
                    reinterpret_cast<const char*>(raw.data()) + raw.size());
  } catch (const json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }

  KnowledgeBank bank;
  std::size_t dv = 0, dt = 0, n = 0;
  std::string means_sum, names_sum;
  try {
    const int version = j.at("version").get<int>();
    if (version != kBankVersion) {
      throw FormatError(header_path.string() + ": unknown bank version " + std::to_string(version));
    }
    dv = j.at("d_v").get<std::size_t>();
    dt = j.at("d_t").get<std::size_t>();
    n = j.at("num_classes").get<std::size_t>();
    bank.class_names = j.at("class_names").get<std::vector<std::string>>();
    means_sum = j.at("means_fnv1a").get<std::string>();
    names_sum = j.at("names_emb_fnv1a").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }
  if (bank.class_names.size() != n) throw FormatError(header_path.string() + ": class_names length mismatch");

  const auto means_path = dir / "bank.means";
  const auto names_path = dir / "bank.names_emb";
  const auto means_raw = read_file(means_path);
  const auto names_raw = read_file(names_path);
  if (fnv1a64_hex(means_raw) != means_sum) throw ChecksumError(means_path.string() + ": checksum mismatch");
  if (fnv1a64_hex(names_raw) != names_sum) throw ChecksumError(names_path.string() + ": checksum mismatch");
  bank.means = decode_rows(means_raw, n, dv, means_path);
  bank.name_embs = decode_rows(names_raw, n, dt, names_path);
  bank.validate();
  return bank;
}

}  // namespace pmce
