#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unmemo/corpus.hpp"

namespace unmemo {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int context_len = 512;
  int vocab_size = 0;
  std::uint64_t init_seed = 0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form parameter count for a pre-norm, tied-embedding transformer.
std::size_t parameter_count(const ModelConfig& cfg);

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat parameter layout: every tensor is a contiguous row-major slice of a
/// single buffer. Gradients and optimizer moments share the same layout.
std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg);

struct TrainingMeta {
  std::int64_t steps = 0;
  std::string loss_digest;
  double heldout_perplexity = 0.0;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Flat buffers get Eigen's alignment so vectorized reductions split the same way in every process.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct LayerTape {
  RowMatrix<T> x_in, ln1_hat, h1, qkv, attn_cat, x_mid, ln2_hat, h2, pre_act, act;
  Eigen::Matrix<T, Eigen::Dynamic, 1> ln1_rstd, ln2_rstd;
  std::vector<RowMatrix<T>> probs;  // one L x L matrix per head
};

/// Activations saved by a forward pass for the matching backward pass.
template <typename T>
struct ForwardTape {
  std::vector<TokenId> ids;
  std::vector<LayerTape<T>> layers;
  RowMatrix<T> x_final, lnf_hat, hf;
  Eigen::Matrix<T, Eigen::Dynamic, 1> lnf_rstd;
};

/// Decoder-only transformer with learned positional embeddings, pre-norm
/// blocks, GELU feed-forward and an output head tied to the token embedding.
template <typename T>
class Transformer {
 public:
  using Matrix = RowMatrix<T>;

  explicit Transformer(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorInfo>& layout() const { return layout_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  TrainingMeta& meta() { return meta_; }
  const TrainingMeta& meta() const { return meta_; }

  /// Logits, one row per input position.
  Matrix forward(std::span<const TokenId> ids) const;
  Matrix forward(std::span<const TokenId> ids, ForwardTape<T>& tape) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
  /// When `d_input` is non-null it receives d(loss)/d(input embedding rows).
  void backward(const ForwardTape<T>& tape, const Matrix& d_logits, std::span<T> grads,
                Matrix* d_input = nullptr) const;

  const T* tensor(const std::string& name) const;
  T* tensor(const std::string& name);

  /// Copy with every parameter converted to another scalar type.
  template <typename U>
  Transformer<U> cast() const {
    Transformer<U> out(cfg_);
    auto dst = out.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    out.meta() = meta_;
    return out;
  }

 private:
  void check_input(std::span<const TokenId> ids) const;

  ModelConfig cfg_;
  std::vector<TensorInfo> layout_;
  AlignedVector<T> params_;
  TrainingMeta meta_;
};

using Model = Transformer<float>;
using LogitMatrix = RowMatrix<float>;

/// Deterministic initialization from cfg.init_seed.
Model init_model(const ModelConfig& cfg);
template <typename T>
void init_parameters(Transformer<T>& model);

/// Incremental decoding with a key/value cache. Feeding tokens one at a
/// time yields the same logits rows as a full forward pass.
class Decoder {
 public:
  explicit Decoder(const Model& model);

  /// Appends a token; returns the logits predicting the next one.
  const RowVec<float>& step(TokenId token);
  int position() const { return pos_; }

 private:
  const Model& model_;
  int pos_ = 0;
  std::vector<RowMatrix<float>> keys_, values_;
  RowVec<float> logits_;
};

/// Read-only deep copy used as the unchanging reference during
/// unmemorization.
class FrozenModel {
 public:
  explicit FrozenModel(const Model& model) : model_(std::make_shared<const Model>(model)) {}

  LogitMatrix forward(std::span<const TokenId> ids) const { return model_->forward(ids); }
  const Model& model() const { return *model_; }
  const ModelConfig& config() const { return model_->config(); }

 private:
  std::shared_ptr<const Model> model_;
};

FrozenModel clone_reference(const Model& model);

// Checkpoint container.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save(const Model& model, const std::filesystem::path& path);
Model load(const std::filesystem::path& path);

/// SHA-256 over config and raw parameter bytes.
std::string parameter_digest(const Model& model);

}  // namespace unmemo
