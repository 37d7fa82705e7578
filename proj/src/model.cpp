#include "unmemo/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "unmemo/json_io.hpp"
#include "unmemo/digest.hpp"
#include "unmemo/error.hpp"
#include "unmemo/rng.hpp"

namespace unmemo {

void ModelConfig::validate() const {
  require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_ff >= 1 && context_len >= 1 && vocab_size >= 1,
          ErrorKind::kInvalidArgument, "model dimensions must all be >= 1");
  require(d_model % n_heads == 0, ErrorKind::kInvalidArgument,
          "d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
  require(static_cast<std::size_t>(vocab_size) >= Vocab::kMinSize, ErrorKind::kInvalidArgument,
          "vocab_size below the vocabulary minimum");
  require(static_cast<std::size_t>(vocab_size) <= Vocab::kMaxSize, ErrorKind::kInvalidArgument,
          "vocab_size exceeds the vocabulary limit");
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t v = cfg.vocab_size, c = cfg.context_len, d = cfg.d_model, f = cfg.d_ff, l = cfg.n_layers;
  return v * d + c * d + l * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d;
}

std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg) {
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    out.push_back({std::move(name), std::move(shape), offset, n});
    offset += n;
  };
  const int d = cfg.d_model, f = cfg.d_ff;
  add("tok_emb", {cfg.vocab_size, d});
  add("pos_emb", {cfg.context_len, d});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    add(p + "ln1.weight", {d});
    add(p + "ln1.bias", {d});
    add(p + "attn.qkv.weight", {d, 3 * d});
    add(p + "attn.qkv.bias", {3 * d});
    add(p + "attn.proj.weight", {d, d});
    add(p + "attn.proj.bias", {d});
    add(p + "ln2.weight", {d});
    add(p + "ln2.bias", {d});
    add(p + "mlp.fc.weight", {d, f});
    add(p + "mlp.fc.bias", {f});
    add(p + "mlp.proj.weight", {f, d});
    add(p + "mlp.proj.bias", {d});
  }
  add("ln_f.weight", {d});
  add("ln_f.bias", {d});
  return out;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// Offsets of one block's tensors inside the flat buffer; the order matches
// parameter_layout().
struct BlockOffsets {
  std::size_t ln1_w, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_w, ln2_b, fc_w, fc_b, fc2_w, fc2_b;
};

struct Offsets {
  std::size_t tok, pos, lnf_w, lnf_b;
  std::vector<BlockOffsets> blocks;
};

Offsets offsets_of(const std::vector<TensorInfo>& layout, int n_layers) {
  Offsets o{};
  std::size_t i = 0;
  o.tok = layout[i++].offset;
  o.pos = layout[i++].offset;
  for (int l = 0; l < n_layers; ++l) {
    BlockOffsets b{};
    for (auto* field : {&b.ln1_w, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.proj_w, &b.proj_b, &b.ln2_w, &b.ln2_b,
                        &b.fc_w, &b.fc_b, &b.fc2_w, &b.fc2_b})
      *field = layout[i++].offset;
    o.blocks.push_back(b);
  }
  o.lnf_w = layout[i++].offset;
  o.lnf_b = layout[i++].offset;
  return o;
}

template <typename T>
using CMat = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MMat = Eigen::Map<RowMatrix<T>>;
template <typename T>
using CRow = Eigen::Map<const RowVec<T>>;
template <typename T>
using MRow = Eigen::Map<RowVec<T>>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void layer_norm(const RowMatrix<T>& x, const T* w, const T* b, RowMatrix<T>& xhat, ColVec<T>& rstd,
                RowMatrix<T>& y) {
  const auto rows = x.rows(), d = x.cols();
  xhat.resize(rows, d);
  rstd.resize(rows);
  CRow<T> gamma(w, d), beta(b, d);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const T mean = x.row(i).mean();
    auto centered = (x.row(i).array() - mean).eval();
    const T var = centered.square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    rstd(i) = r;
    xhat.row(i) = centered * r;
  }
  y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
}

template <typename T>
RowMatrix<T> layer_norm_backward(const RowMatrix<T>& dy, const RowMatrix<T>& xhat, const ColVec<T>& rstd,
                                 const T* w, T* dw, T* db) {
  const auto rows = dy.rows(), d = dy.cols();
  CRow<T> gamma(w, d);
  MRow<T>(dw, d) += (dy.array() * xhat.array()).colwise().sum().matrix();
  MRow<T>(db, d) += dy.colwise().sum();
  RowMatrix<T> dxhat = (dy.array().rowwise() * gamma.array()).matrix();
  RowMatrix<T> dx(rows, d);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename T>
T gelu(T u) {
  return T(0.5) * u * (T(1) + std::tanh(T(kGeluC) * (u + T(0.044715) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  const T t = std::tanh(T(kGeluC) * (u + T(0.044715) * u * u * u));
  return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * 0.044715) * u * u);
}

}  // namespace

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  layout_ = parameter_layout(cfg_);
  params_.assign(parameter_count(cfg_), T(0));
}

template <typename T>
const T* Transformer<T>::tensor(const std::string& name) const {
  for (const auto& t : layout_)
    if (t.name == name) return params_.data() + t.offset;
  fail(ErrorKind::kInvalidArgument, "no tensor named " + name);
}

template <typename T>
T* Transformer<T>::tensor(const std::string& name) {
  return const_cast<T*>(std::as_const(*this).tensor(name));
}

template <typename T>
void Transformer<T>::check_input(std::span<const TokenId> ids) const {
  require(!ids.empty(), ErrorKind::kInvalidArgument, "forward needs at least one token");
  require(static_cast<int>(ids.size()) <= cfg_.context_len, ErrorKind::kInvalidArgument,
          "sequence of " + std::to_string(ids.size()) + " tokens exceeds context_len " +
              std::to_string(cfg_.context_len));
  for (auto id : ids)
    require(id >= 0 && id < cfg_.vocab_size, ErrorKind::kOutOfRange, "token id " + std::to_string(id) + " out of range");
}

template <typename T>
typename Transformer<T>::Matrix Transformer<T>::forward(std::span<const TokenId> ids) const {
  ForwardTape<T> tape;
  return forward(ids, tape);
}

template <typename T>
typename Transformer<T>::Matrix Transformer<T>::forward(std::span<const TokenId> ids, ForwardTape<T>& tape) const {
  check_input(ids);
  const auto off = offsets_of(layout_, cfg_.n_layers);
  const int L = static_cast<int>(ids.size()), d = cfg_.d_model, f = cfg_.d_ff, H = cfg_.n_heads,
            hd = cfg_.head_dim();
  const T* p = params_.data();
  const T scale = T(1) / std::sqrt(T(hd));

  CMat<T> tok(p + off.tok, cfg_.vocab_size, d);
  CMat<T> pos(p + off.pos, cfg_.context_len, d);

  tape.ids.assign(ids.begin(), ids.end());
  tape.layers.resize(static_cast<std::size_t>(cfg_.n_layers));

  Matrix x(L, d);
  for (int t = 0; t < L; ++t) x.row(t) = tok.row(ids[static_cast<std::size_t>(t)]) + pos.row(t);

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto& b = off.blocks[static_cast<std::size_t>(l)];
    auto& lt = tape.layers[static_cast<std::size_t>(l)];
    lt.x_in = x;
    layer_norm<T>(x, p + b.ln1_w, p + b.ln1_b, lt.ln1_hat, lt.ln1_rstd, lt.h1);
    lt.qkv.noalias() = lt.h1 * CMat<T>(p + b.qkv_w, d, 3 * d);
    lt.qkv.rowwise() += CRow<T>(p + b.qkv_b, 3 * d);

    lt.attn_cat.resize(L, d);
    lt.probs.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      auto q = lt.qkv.block(0, h * hd, L, hd);
      auto k = lt.qkv.block(0, d + h * hd, L, hd);
      auto v = lt.qkv.block(0, 2 * d + h * hd, L, hd);
      Matrix s = (q * k.transpose()) * scale;
      for (int i = 0; i < L; ++i) {
        const T mx = s.row(i).head(i + 1).maxCoeff();
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
          const T e = std::exp(s(i, j) - mx);
          s(i, j) = e;
          sum += e;
        }
        s.row(i).head(i + 1) /= sum;
        s.row(i).tail(L - i - 1).setZero();
      }
      lt.attn_cat.block(0, h * hd, L, hd).noalias() = s * v;
      lt.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    x.noalias() += lt.attn_cat * CMat<T>(p + b.proj_w, d, d);
    x.rowwise() += CRow<T>(p + b.proj_b, d);
    lt.x_mid = x;

    layer_norm<T>(x, p + b.ln2_w, p + b.ln2_b, lt.ln2_hat, lt.ln2_rstd, lt.h2);
    lt.pre_act.noalias() = lt.h2 * CMat<T>(p + b.fc_w, d, f);
    lt.pre_act.rowwise() += CRow<T>(p + b.fc_b, f);
    lt.act = lt.pre_act.unaryExpr([](T u) { return gelu(u); });
    x.noalias() += lt.act * CMat<T>(p + b.fc2_w, f, d);
    x.rowwise() += CRow<T>(p + b.fc2_b, d);
  }

  tape.x_final = x;
  layer_norm<T>(x, p + off.lnf_w, p + off.lnf_b, tape.lnf_hat, tape.lnf_rstd, tape.hf);
  Matrix logits = tape.hf * tok.transpose();
  return logits;
}

template <typename T>
void Transformer<T>::backward(const ForwardTape<T>& tape, const Matrix& d_logits, std::span<T> grads,
                              Matrix* d_input) const {
  require(grads.size() == params_.size(), ErrorKind::kInvalidArgument, "gradient buffer size mismatch");
  const auto off = offsets_of(layout_, cfg_.n_layers);
  const int L = static_cast<int>(tape.ids.size()), d = cfg_.d_model, f = cfg_.d_ff, H = cfg_.n_heads,
            hd = cfg_.head_dim();
  require(d_logits.rows() == L && d_logits.cols() == cfg_.vocab_size, ErrorKind::kInvalidArgument,
          "d_logits shape does not match the tape");
  const T* p = params_.data();
  T* g = grads.data();
  const T scale = T(1) / std::sqrt(T(hd));

  CMat<T> tok(p + off.tok, cfg_.vocab_size, d);
  MMat<T> dtok(g + off.tok, cfg_.vocab_size, d);
  MMat<T> dpos(g + off.pos, cfg_.context_len, d);

  dtok.noalias() += d_logits.transpose() * tape.hf;
  Matrix dhf = d_logits * tok;
  Matrix dx = layer_norm_backward<T>(dhf, tape.lnf_hat, tape.lnf_rstd, p + off.lnf_w, g + off.lnf_w, g + off.lnf_b);

  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const auto& b = off.blocks[static_cast<std::size_t>(l)];
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];

    // x_out = x_mid + gelu(h2 W1 + b1) W2 + b2
    MMat<T>(g + b.fc2_w, f, d).noalias() += lt.act.transpose() * dx;
    MRow<T>(g + b.fc2_b, d) += dx.colwise().sum();
    Matrix dpre = dx * CMat<T>(p + b.fc2_w, f, d).transpose();
    dpre.array() *= lt.pre_act.unaryExpr([](T u) { return gelu_grad(u); }).array();
    MMat<T>(g + b.fc_w, d, f).noalias() += lt.h2.transpose() * dpre;
    MRow<T>(g + b.fc_b, f) += dpre.colwise().sum();
    Matrix dh2 = dpre * CMat<T>(p + b.fc_w, d, f).transpose();
    Matrix dx_mid = dx + layer_norm_backward<T>(dh2, lt.ln2_hat, lt.ln2_rstd, p + b.ln2_w, g + b.ln2_w, g + b.ln2_b);

    // x_mid = x_in + attn_cat Wp + bp
    MMat<T>(g + b.proj_w, d, d).noalias() += lt.attn_cat.transpose() * dx_mid;
    MRow<T>(g + b.proj_b, d) += dx_mid.colwise().sum();
    Matrix dcat = dx_mid * CMat<T>(p + b.proj_w, d, d).transpose();

    Matrix dqkv(L, 3 * d);
    for (int h = 0; h < H; ++h) {
      const auto& a = lt.probs[static_cast<std::size_t>(h)];
      auto q = lt.qkv.block(0, h * hd, L, hd);
      auto k = lt.qkv.block(0, d + h * hd, L, hd);
      auto v = lt.qkv.block(0, 2 * d + h * hd, L, hd);
      auto dout = dcat.block(0, h * hd, L, hd);
      Matrix da = dout * v.transpose();
      dqkv.block(0, 2 * d + h * hd, L, hd).noalias() = a.transpose() * dout;
      // softmax backward; masked entries have a == 0 and stay zero
      Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (da.array() * a.array()).rowwise().sum();
      Matrix ds = (a.array() * (da.array().colwise() - rowdot.array())).matrix() * scale;
      dqkv.block(0, h * hd, L, hd).noalias() = ds * k;
      dqkv.block(0, d + h * hd, L, hd).noalias() = ds.transpose() * q;
    }
    MMat<T>(g + b.qkv_w, d, 3 * d).noalias() += lt.h1.transpose() * dqkv;
    MRow<T>(g + b.qkv_b, 3 * d) += dqkv.colwise().sum();
    Matrix dh1 = dqkv * CMat<T>(p + b.qkv_w, d, 3 * d).transpose();
    dx = dx_mid + layer_norm_backward<T>(dh1, lt.ln1_hat, lt.ln1_rstd, p + b.ln1_w, g + b.ln1_w, g + b.ln1_b);
  }

  for (int t = 0; t < L; ++t) {
    dtok.row(tape.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    dpos.row(t) += dx.row(t);
  }
  if (d_input) *d_input = std::move(dx);
}

template <typename T>
void init_parameters(Transformer<T>& model) {
  const auto& cfg = model.config();
  Rng rng(cfg.init_seed);
  auto params = model.params();
  const double resid_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& t : model.layout()) {
    T* p = params.data() + t.offset;
    const bool is_bias = t.name.ends_with(".bias");
    const bool is_ln_weight = t.name.find("ln") != std::string::npos && t.name.ends_with(".weight");
    if (is_bias) {
      std::fill(p, p + t.size, T(0));
    } else if (is_ln_weight) {
      std::fill(p, p + t.size, T(1));
    } else {
      const bool residual = t.name.ends_with("attn.proj.weight") || t.name.ends_with("mlp.proj.weight");
      const double sd = residual ? resid_std : 0.02;
      for (std::size_t i = 0; i < t.size; ++i) p[i] = static_cast<T>(sd * rng.normal());
    }
  }
}

Model init_model(const ModelConfig& cfg) {
  Model m(cfg);
  init_parameters(m);
  return m;
}

template class Transformer<float>;
template class Transformer<double>;
template void init_parameters<float>(Transformer<float>&);
template void init_parameters<double>(Transformer<double>&);

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(const Model& model) : model_(model) {
  const auto& cfg = model.config();
  keys_.assign(static_cast<std::size_t>(cfg.n_layers), RowMatrix<float>(cfg.context_len, cfg.d_model));
  values_.assign(static_cast<std::size_t>(cfg.n_layers), RowMatrix<float>(cfg.context_len, cfg.d_model));
}

const RowVec<float>& Decoder::step(TokenId token) {
  const auto& cfg = model_.config();
  require(pos_ < cfg.context_len, ErrorKind::kInvalidArgument, "decoder exceeded context_len");
  require(token >= 0 && token < cfg.vocab_size, ErrorKind::kOutOfRange, "token id out of range");
  const auto off = offsets_of(model_.layout(), cfg.n_layers);
  const int d = cfg.d_model, f = cfg.d_ff, H = cfg.n_heads, hd = cfg.head_dim();
  const float* p = model_.params().data();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  CMat<float> tok(p + off.tok, cfg.vocab_size, d);
  RowMatrix<float> x = tok.row(token) + CMat<float>(p + off.pos, cfg.context_len, d).row(pos_);
  RowMatrix<float> xhat, h;
  ColVec<float> rstd;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& b = off.blocks[static_cast<std::size_t>(l)];
    layer_norm<float>(x, p + b.ln1_w, p + b.ln1_b, xhat, rstd, h);
    RowMatrix<float> qkv = h * CMat<float>(p + b.qkv_w, d, 3 * d);
    qkv += CRow<float>(p + b.qkv_b, 3 * d);
    auto& kc = keys_[static_cast<std::size_t>(l)];
    auto& vc = values_[static_cast<std::size_t>(l)];
    kc.row(pos_) = qkv.block(0, d, 1, d);
    vc.row(pos_) = qkv.block(0, 2 * d, 1, d);
    RowMatrix<float> cat(1, d);
    const int n = pos_ + 1;
    for (int hh = 0; hh < H; ++hh) {
      RowMatrix<float> s = (qkv.block(0, hh * hd, 1, hd) * kc.block(0, hh * hd, n, hd).transpose()) * scale;
      const float mx = s.maxCoeff();
      s = (s.array() - mx).exp();
      s /= s.sum();
      cat.block(0, hh * hd, 1, hd).noalias() = s * vc.block(0, hh * hd, n, hd);
    }
    x.noalias() += cat * CMat<float>(p + b.proj_w, d, d);
    x += CRow<float>(p + b.proj_b, d);
    layer_norm<float>(x, p + b.ln2_w, p + b.ln2_b, xhat, rstd, h);
    RowMatrix<float> u = h * CMat<float>(p + b.fc_w, d, f);
    u += CRow<float>(p + b.fc_b, f);
    u = u.unaryExpr([](float v) { return gelu(v); });
    x.noalias() += u * CMat<float>(p + b.fc2_w, f, d);
    x += CRow<float>(p + b.fc2_b, d);
  }
  layer_norm<float>(x, p + off.lnf_w, p + off.lnf_b, xhat, rstd, h);
  logits_ = h * tok.transpose();
  ++pos_;
  return logits_;
}

FrozenModel clone_reference(const Model& model) { return FrozenModel(model); }

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'U', 'N', 'M', 'E', 'M', 'O', 'C', 'K'};
constexpr std::size_t kTrailerLen = 64;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n) {
    require(n <= data_.size() - pos_, ErrorKind::kIntegrity, "checkpoint truncated");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string serialize_parameters(const Model& model) {
  std::string out;
  out.reserve(model.num_params() * 4);
  for (float v : model.params()) put_f32(out, v);
  return out;
}

}  // namespace

void save(const Model& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = model.config();
  header["training_meta"] = model.meta();
  const std::string header_text = header.dump();

  std::string body(kMagic, sizeof kMagic);
  put_u32(body, kCheckpointVersion);
  put_u32(body, static_cast<std::uint32_t>(header_text.size()));
  body += header_text;
  put_u32(body, static_cast<std::uint32_t>(model.layout().size()));
  const auto params = model.params();
  for (const auto& t : model.layout()) {
    put_u32(body, static_cast<std::uint32_t>(t.name.size()));
    body += t.name;
    put_u32(body, static_cast<std::uint32_t>(t.shape.size()));
    for (int s : t.shape) put_u32(body, static_cast<std::uint32_t>(s));
    for (std::size_t i = 0; i < t.size; ++i) put_f32(body, params[t.offset + i]);
  }
  body += sha256_hex(body);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot open checkpoint for writing: " + path.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  require(out.good(), ErrorKind::kIo, "failed writing checkpoint: " + path.string());
}

Model load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open checkpoint: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();

  require(data.size() >= sizeof kMagic + 8 + kTrailerLen, ErrorKind::kIntegrity, "checkpoint truncated");
  require(std::memcmp(data.data(), kMagic, sizeof kMagic) == 0, ErrorKind::kIntegrity, "bad checkpoint magic");
  Reader head(std::string_view(data).substr(sizeof kMagic, 4));
  const auto version = head.u32();
  require(version == kCheckpointVersion, ErrorKind::kVersion,
          "checkpoint format_version " + std::to_string(version) + " != supported " +
              std::to_string(kCheckpointVersion));

  const std::string_view payload(data.data(), data.size() - kTrailerLen);
  const std::string_view trailer(data.data() + payload.size(), kTrailerLen);
  require(sha256_hex(payload) == trailer, ErrorKind::kIntegrity, "checkpoint digest mismatch");

  Reader r(payload.substr(sizeof kMagic + 4));
  const auto header_len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("checkpoint header unreadable: ") + e.what());
  }
  Model model(header.at("config").get<ModelConfig>());
  model.meta() = header.at("training_meta").get<TrainingMeta>();

  const auto count = r.u32();
  require(count == model.layout().size(), ErrorKind::kIntegrity, "tensor count does not match config");
  auto params = model.params();
  for (const auto& t : model.layout()) {
    const auto name_len = r.u32();
    require(r.bytes(name_len) == t.name, ErrorKind::kIntegrity, "unexpected tensor record, wanted " + t.name);
    const auto ndim = r.u32();
    require(ndim == t.shape.size(), ErrorKind::kIntegrity, "rank mismatch for " + t.name);
    for (int s : t.shape) require(r.u32() == static_cast<std::uint32_t>(s), ErrorKind::kIntegrity, "shape mismatch for " + t.name);
    for (std::size_t i = 0; i < t.size; ++i) params[t.offset + i] = r.f32();
  }
  require(r.done(), ErrorKind::kIntegrity, "trailing bytes in checkpoint");
  return model;
}

std::string parameter_digest(const Model& model) {
  Sha256 h;
  h.update(nlohmann::json(model.config()).dump());
  h.update(serialize_parameters(model));
  return h.finish();
}

}  // namespace unmemo
