#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "softsynth/backbone.hpp"
#include "softsynth/common.hpp"
#include "softsynth/container.hpp"

namespace softsynth {

/// Trainable prefix rows living in the backbone's embedding space.
struct SoftTokenMatrix {
  Matrix values;
  bool trainable = true;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  /// Gradient step hook; a frozen matrix ignores updates.
  void apply_update(const Matrix& delta) {
    if (trainable) values += delta;
  }
  friend bool operator==(const SoftTokenMatrix&, const SoftTokenMatrix&) = default;
};

/// The k shared domain soft tokens (D, or D* when trained with the contrastive term).
struct DomainRepresentation {
  SoftTokenMatrix matrix;
  Eigen::Index k() const { return matrix.rows(); }
  friend bool operator==(const DomainRepresentation&, const DomainRepresentation&) = default;
};

/// One ℓ x d matrix per reference sample, kept in insertion order.
class SampleRepresentationSet {
 public:
  SampleRepresentationSet() = default;
  SampleRepresentationSet(Eigen::Index rows, Eigen::Index cols) : rows_(rows), cols_(cols) {}

  void add(const std::string& id, SoftTokenMatrix m) {
    require(m.rows() == rows_ && m.cols() == cols_, "sample representation '" + id + "' has the wrong shape");
    require(!index_.contains(id), "duplicate sample representation '" + id + "'");
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    mats_.push_back(std::move(m));
  }

  bool contains(const std::string& id) const { return index_.contains(id); }
  const SoftTokenMatrix& at(const std::string& id) const { return mats_.at(position(id)); }
  SoftTokenMatrix& at(const std::string& id) { return mats_.at(position(id)); }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  friend bool operator==(const SampleRepresentationSet& a, const SampleRepresentationSet& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.ids_ == b.ids_ && a.mats_ == b.mats_;
  }

 private:
  std::size_t position(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("no sample representation for id '" + id + "'");
    return it->second;
  }

  Eigen::Index rows_ = 0, cols_ = 0;
  std::vector<std::string> ids_;
  std::vector<SoftTokenMatrix> mats_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class InitStrategy { VocabRows, Gaussian };

inline InitStrategy parse_init_strategy(std::string_view s) {
  if (s == "vocab-rows") return InitStrategy::VocabRows;
  if (s == "gaussian") return InitStrategy::Gaussian;
  throw ValidationError("unknown init strategy '" + std::string(s) + "' (expected vocab-rows or gaussian)");
}

inline std::string to_string(InitStrategy s) { return s == InitStrategy::VocabRows ? "vocab-rows" : "gaussian"; }

/// Standard deviation of all entries about their mean.
inline double entry_stddev(const Matrix& m) {
  const double mean = m.mean();
  return std::sqrt((m.array() - mean).square().sum() / static_cast<double>(m.size()));
}

/// vocab-rows copies uniformly drawn embedding rows; gaussian draws i.i.d.
/// N(0, sd) entries with sd the embedding table's per-entry stddev.
inline SoftTokenMatrix init_representation(Eigen::Index rows, Eigen::Index d, InitStrategy strategy,
                                           const Matrix& embedding_table, std::uint64_t seed) {
  require(rows >= 0 && d >= 1, "invalid soft-token matrix shape");
  require(embedding_table.rows() >= 1 && embedding_table.cols() == d, "embedding table width must equal d");
  std::mt19937_64 rng(seed);
  SoftTokenMatrix out{Matrix(rows, d), true};
  if (strategy == InitStrategy::VocabRows) {
    std::uniform_int_distribution<Eigen::Index> pick(0, embedding_table.rows() - 1);
    for (Eigen::Index r = 0; r < rows; ++r) out.values.row(r) = embedding_table.row(pick(rng));
  } else {
    std::normal_distribution<double> normal(0.0, entry_stddev(embedding_table));
    for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values.data()[i] = normal(rng);
  }
  return out;
}

/// [domain rows; sample rows]. Without a sample this is the synthesis-time prefix.
inline Matrix compose_prefix(const DomainRepresentation& domain, const SoftTokenMatrix* sample = nullptr) {
  if (!sample || sample->rows() == 0) return domain.matrix.values;
  require(sample->cols() == domain.matrix.cols(), "sample and domain soft tokens differ in width");
  Matrix out(domain.k() + sample->rows(), domain.matrix.cols());
  out.topRows(domain.k()) = domain.matrix.values;
  out.bottomRows(sample->rows()) = sample->values;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence.

struct RepresentationCheckpoint {
  DomainRepresentation domain;
  SampleRepresentationSet samples;
  /// Fully resolved training configuration (k, ℓ, λ, seeds, ...).
  nlohmann::json config = nlohmann::json::object();
  std::string backbone_checksum;
};

inline constexpr const char* kPrefixPlacement = "soft-tokens-before-bos";

inline Container to_container(const RepresentationCheckpoint& ckpt) {
  Container c;
  c.kind = "representation";
  c.meta["backbone_checksum"] = ckpt.backbone_checksum;
  c.meta["k"] = ckpt.domain.k();
  c.meta["l"] = ckpt.samples.rows();
  c.meta["d"] = ckpt.domain.matrix.cols();
  c.meta["prefix_placement"] = kPrefixPlacement;
  c.meta["config"] = ckpt.config;
  c.meta["sample_ids"] = ckpt.samples.ids();
  c.add("domain", ckpt.domain.matrix.values);
  for (const auto& id : ckpt.samples.ids()) c.add("sample:" + id, ckpt.samples.at(id).values);
  return c;
}

inline void save_representation(const RepresentationCheckpoint& ckpt, const std::filesystem::path& path) {
  to_container(ckpt).save(path);
}

/// Throws when the checkpoint was trained against a different backbone.
inline RepresentationCheckpoint load_representation(const std::filesystem::path& path, const Backbone& backbone) {
  const Container c = Container::load(path, "representation");
  RepresentationCheckpoint out;
  out.backbone_checksum = c.meta.at("backbone_checksum").get<std::string>();
  if (out.backbone_checksum != backbone.checksum_hex())
    throw ValidationError("representation was trained against backbone " + out.backbone_checksum +
                          ", but the loaded backbone has checksum " + backbone.checksum_hex());
  out.config = c.meta.at("config");
  out.domain.matrix = SoftTokenMatrix{c.tensor("domain"), true};
  const auto l = c.meta.at("l").get<Eigen::Index>();
  const auto d = c.meta.at("d").get<Eigen::Index>();
  out.samples = SampleRepresentationSet(l, d);
  for (const auto& id : c.meta.at("sample_ids")) {
    const auto sid = id.get<std::string>();
    out.samples.add(sid, SoftTokenMatrix{c.tensor("sample:" + sid), true});
  }
  require(out.domain.matrix.cols() == backbone.width(), "representation width does not match backbone");
  return out;
}

}  // namespace softsynth
