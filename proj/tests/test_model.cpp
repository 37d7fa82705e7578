#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "support.hpp"
#include "unmemo/error.hpp"
#include "unmemo/model.hpp"
#include "unmemo/optim.hpp"
#include "unmemo/rng.hpp"

using namespace unmemo;
using unmemo::testing::micro_config;
using unmemo::testing::random_ids;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

// Count by walking the architecture, independent of the closed form.
std::size_t count_by_walking(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  std::size_t n = static_cast<std::size_t>(c.vocab_size) * d + static_cast<std::size_t>(c.context_len) * d;
  for (int l = 0; l < c.n_layers; ++l) {
    n += 2 * d;              // ln1
    n += d * 3 * d + 3 * d;  // qkv
    n += d * d + d;          // attention out
    n += 2 * d;              // ln2
    n += d * f + f;          // fc
    n += f * d + d;          // proj
  }
  return n + 2 * d;
}

}  // namespace

TEST_CASE("init is deterministic and seed-dependent") {
  const auto a = init_model(micro_config(20, 5));
  const auto b = init_model(micro_config(20, 5));
  const auto c = init_model(micro_config(20, 6));
  CHECK(parameter_digest(a) == parameter_digest(b));
  CHECK(parameter_digest(a) != parameter_digest(c));
}

TEST_CASE("head dimension and config validation") {
  ModelConfig c{.n_layers = 1, .n_heads = 4, .d_model = 64, .d_ff = 64, .context_len = 8, .vocab_size = 10};
  CHECK(c.head_dim() == 16);
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), Error);
  c.n_heads = 4;
  c.d_ff = 0;
  CHECK_THROWS_AS(init_model(c), Error);
}

TEST_CASE("parameter count matches the closed form and the layout") {
  for (int layers : {1, 2, 3})
    for (int d : {8, 16, 32}) {
      const ModelConfig c{.n_layers = layers, .n_heads = 2, .d_model = d, .d_ff = 3 * d, .context_len = 12,
                          .vocab_size = 17};
      const auto model = init_model(c);
      CHECK(parameter_count(c) == count_by_walking(c));
      CHECK(model.num_params() == count_by_walking(c));
    }
}

TEST_CASE("forward shape, causality and normalization") {
  const auto model = init_model(micro_config(24));
  auto ids = random_ids(3, 12, 24);
  const auto logits = model.forward(ids);
  REQUIRE(logits.rows() == 12);
  REQUIRE(logits.cols() == 24);
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const auto row = logits.row(t).cast<double>();
    const double s = (row.array() - row.maxCoeff()).exp().sum();
    const double total = ((row.array() - row.maxCoeff()).exp() / s).sum();
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  for (int t = 0; t < 11; ++t) {
    auto changed = ids;
    for (std::size_t j = static_cast<std::size_t>(t) + 1; j < changed.size(); ++j) changed[j] = 4 + (changed[j] + 3) % 20;
    const auto other = model.forward(changed);
    for (Eigen::Index r = 0; r <= t; ++r) CHECK((other.row(r) - logits.row(r)).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("forward rejects sequences longer than the context") {
  const auto model = init_model(micro_config(24));
  CHECK_THROWS_AS(model.forward(random_ids(1, 33, 24)), Error);
  const std::vector<TokenId> bad{0, 99};
  CHECK_THROWS_AS(model.forward(bad), Error);
}

TEST_CASE("incremental decoder matches the full forward pass") {
  const auto model = init_model(micro_config(24));
  const auto ids = random_ids(8, 20, 24);
  const auto full = model.forward(ids);
  Decoder dec(model);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto& row = dec.step(ids[t]);
    CHECK((row - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() < 1e-5f);
  }
  CHECK(dec.position() == 20);
}

TEST_CASE("fp64 backward matches central finite differences") {
  const auto cfg = micro_config(12, 21);
  auto model = init_model(cfg).cast<double>();
  const auto ids = random_ids(5, 9, 12);
  RowMatrix<double> weights(9, 12);
  Rng rng(4);
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = rng.normal();
  auto loss = [&](const Transformer<double>& m) { return (m.forward(ids).array() * weights.array()).sum(); };

  ForwardTape<double> tape;
  model.forward(ids, tape);
  std::vector<double> grads(model.num_params(), 0.0);
  RowMatrix<double> d_input;
  model.backward(tape, weights, grads, &d_input);

  double worst = 0.0;
  const double h = 1e-6;
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss(model);
    params[i] = keep - h;
    const double down = loss(model);
    params[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grads[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - grads[i]) / denom);
  }
  CHECK(worst < 1e-3);

  // pos_emb enters additively, so its gradient row equals d_input row.
  const auto& pos = model.layout()[1];
  REQUIRE(pos.name == "pos_emb");
  for (Eigen::Index t = 0; t < d_input.rows(); ++t)
    for (Eigen::Index j = 0; j < d_input.cols(); ++j)
      CHECK(d_input(t, j) ==
            doctest::Approx(grads[pos.offset + static_cast<std::size_t>(t * cfg.d_model + j)]).epsilon(1e-9));
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto model = init_model(micro_config(24));
  model.meta().steps = 17;
  model.meta().loss_digest = "abc";
  const auto path = std::filesystem::temp_directory_path() / "unmemo_model_test.ckpt";
  save(model, path);
  const auto back = load(path);
  CHECK(back.config() == model.config());
  CHECK(back.meta().steps == 17);
  CHECK(back.meta().loss_digest == "abc");
  REQUIRE(back.num_params() == model.num_params());
  CHECK(std::equal(back.params().begin(), back.params().end(), model.params().begin()));
  CHECK(parameter_digest(back) == parameter_digest(model));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are refused") {
  const auto model = init_model(micro_config(24));
  const auto path = std::filesystem::temp_directory_path() / "unmemo_model_corrupt.ckpt";
  save(model, path);
  const auto good = read_bytes(path);

  auto expect = [&](const std::string& bytes, ErrorKind kind) {
    write_bytes(path, bytes);
    try {
      load(path);
      FAIL("load accepted a damaged checkpoint");
    } catch (const Error& e) {
      CHECK(e.kind() == kind);
    }
  };
  expect(good.substr(0, good.size() / 2), ErrorKind::kIntegrity);
  expect(good.substr(0, 10), ErrorKind::kIntegrity);
  auto flipped = good;
  flipped[flipped.size() / 2] ^= 0x5a;
  expect(flipped, ErrorKind::kIntegrity);
  auto versioned = good;
  versioned[8] = 9;  // format_version follows the 8-byte magic
  expect(versioned, ErrorKind::kVersion);
  auto magic = good;
  magic[0] = 'X';
  expect(magic, ErrorKind::kIntegrity);
  std::filesystem::remove(path);
}

TEST_CASE("reference copies are isolated from the live model") {
  auto live = init_model(micro_config(24));
  const auto reference = clone_reference(live);
  const auto ids = random_ids(2, 10, 24);
  const auto before = reference.forward(ids);
  CHECK((before - live.forward(ids)).cwiseAbs().maxCoeff() == 0.0f);

  Adam adam(live.num_params(), AdamConfig{});
  std::vector<float> g(live.num_params(), 0.01f);
  adam.step<float>(live.params(), g, 1e-2);
  CHECK((reference.forward(ids) - before).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((live.forward(ids) - before).cwiseAbs().maxCoeff() > 0.0f);
  CHECK((reference.forward(ids) - reference.forward(ids)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("adam clips by global norm") {
  AdamConfig cfg;
  cfg.clip_norm = 1.0;
  Adam a(2, cfg), b(2, cfg);
  std::vector<float> p1{0.0f, 0.0f}, p2{0.0f, 0.0f};
  const std::vector<float> big{300.0f, 400.0f}, unit{0.6f, 0.8f};
  a.step<float>(p1, big, 0.1);
  b.step<float>(p2, unit, 0.1);
  CHECK(p1[0] == doctest::Approx(p2[0]));
  CHECK(p1[1] == doctest::Approx(p2[1]));
}
