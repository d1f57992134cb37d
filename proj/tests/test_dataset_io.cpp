#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "nasb/autograd.hpp"
#include "nasb/checkpoint.hpp"
#include "nasb/dataset.hpp"
#include "nasb/error.hpp"
#include "nasb/io_util.hpp"
#include "nasb/optim.hpp"

using namespace nasb;
using namespace nasb::data;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("nasb_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("gen_synthetic: fixed seed produces byte-identical files") {
  TempDir tmp;
  SynthSpec spec;
  spec.classes = 3;
  spec.samples = 60;
  spec.image_size = 12;
  spec.seed = 99;
  Dataset a = gen_synthetic(spec);
  Dataset b = gen_synthetic(spec);
  save_dataset(a, tmp.file("a_img.ntsr"), tmp.file("a_lbl.nlbl"));
  save_dataset(b, tmp.file("b_img.ntsr"), tmp.file("b_lbl.nlbl"));
  CHECK(io::read_file(tmp.file("a_img.ntsr")) == io::read_file(tmp.file("b_img.ntsr")));
  CHECK(io::read_file(tmp.file("a_lbl.nlbl")) == io::read_file(tmp.file("b_lbl.nlbl")));

  spec.seed = 100;
  Dataset c = gen_synthetic(spec);
  save_dataset(c, tmp.file("c_img.ntsr"), tmp.file("c_lbl.nlbl"));
  CHECK(io::read_file(tmp.file("a_img.ntsr")) != io::read_file(tmp.file("c_img.ntsr")));
}

TEST_CASE("gen_synthetic: trivial difficulty is solved by nearest class mean") {
  SynthSpec spec;
  spec.classes = 4;
  spec.samples = 200;
  spec.image_size = 8;
  spec.difficulty = Difficulty::Trivial;
  spec.seed = 7;
  Dataset ds = gen_synthetic(spec);

  // class means from the first half, evaluate on the second half
  const std::int64_t per = ds.images.size() / ds.size();
  std::vector<double> mean(4, 0.0);
  std::vector<int> count(4, 0);
  for (std::int64_t i = 0; i < ds.size() / 2; ++i) {
    double m = 0;
    for (std::int64_t j = 0; j < per; ++j) m += ds.images.data()[i * per + j];
    mean[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += m / per;
    count[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]++;
  }
  for (int k = 0; k < 4; ++k) mean[static_cast<std::size_t>(k)] /= count[static_cast<std::size_t>(k)];

  std::int64_t hits = 0, total = 0;
  for (std::int64_t i = ds.size() / 2; i < ds.size(); ++i) {
    double m = 0;
    for (std::int64_t j = 0; j < per; ++j) m += ds.images.data()[i * per + j];
    m /= per;
    int best = 0;
    for (int k = 1; k < 4; ++k)
      if (std::abs(m - mean[static_cast<std::size_t>(k)]) <
          std::abs(m - mean[static_cast<std::size_t>(best)]))
        best = k;
    if (best == ds.labels[static_cast<std::size_t>(i)]) ++hits;
    ++total;
  }
  CHECK(hits == total);
}

TEST_CASE("gen_synthetic: easy difficulty supports a linear probe >= 0.8") {
  SynthSpec spec;
  spec.classes = 2;
  spec.samples = 400;
  spec.image_size = 12;
  spec.difficulty = Difficulty::Easy;
  spec.seed = 2024;
  Dataset ds = gen_synthetic(spec);

  // logistic probe on raw pixels
  const std::int64_t feat = ds.images.size() / ds.size();
  autograd::Var w = autograd::Var::param(Tensor::zeros(Shape{2, feat}));
  std::vector<autograd::Var> params{w};
  optim::Adam adam(0.05);
  Tensor flat(Shape{ds.size(), feat}, ds.images.vec());
  for (int epoch = 0; epoch < 60; ++epoch) {
    w.zero_grad();
    autograd::Var logits = autograd::linear(autograd::Var::constant(flat), w);
    autograd::Var loss = autograd::softmax_cross_entropy(logits, ds.labels);
    autograd::backward(loss);
    adam.step(params);
  }
  autograd::Var logits = autograd::linear(autograd::Var::constant(flat), w);
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    const std::int64_t pred =
        logits.value().at(i, 0) >= logits.value().at(i, 1) ? 0 : 1;
    if (pred == ds.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  const double acc = static_cast<double>(hits) / static_cast<double>(ds.size());
  CHECK(acc >= 0.8);
}

TEST_CASE("gen_synthetic rejects degenerate requests") {
  SynthSpec spec;
  spec.classes = 1;
  CHECK_THROWS_AS(gen_synthetic(spec), ValueError);
  spec.classes = 2;
  spec.image_size = 4;
  CHECK_THROWS_AS(gen_synthetic(spec), ValueError);
}

TEST_CASE("tensor files: f32 and f64 round trips") {
  TempDir tmp;
  Rng rng(3);
  Tensor t = Tensor::randn(Shape{2, 3, 4, 5}, rng);

  save_tensor(tmp.file("t64.ntsr"), t, /*as_f32=*/false);
  Tensor t64 = load_tensor(tmp.file("t64.ntsr"));
  REQUIRE(t64.shape() == t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t64[i] == t[i]);

  save_tensor(tmp.file("t32.ntsr"), t, /*as_f32=*/true);
  Tensor t32 = load_tensor(tmp.file("t32.ntsr"));
  for (std::int64_t i = 0; i < t.size(); ++i)
    CHECK(t32[i] == static_cast<double>(static_cast<float>(t[i])));
}

TEST_CASE("label files: round trip and dataset pairing") {
  TempDir tmp;
  std::vector<std::int64_t> labels{0, 1, 2, 1, 0, 2};
  save_labels(tmp.file("l.nlbl"), labels);
  CHECK(load_labels(tmp.file("l.nlbl")) == labels);

  SynthSpec spec;
  spec.classes = 3;
  spec.samples = 30;
  spec.image_size = 8;
  Dataset ds = gen_synthetic(spec);
  save_dataset(ds, tmp.file("i.ntsr"), tmp.file("l2.nlbl"));
  Dataset back = load_dataset(tmp.file("i.ntsr"), tmp.file("l2.nlbl"));
  CHECK(back.size() == 30);
  CHECK(back.num_classes == 3);
  CHECK(back.labels == ds.labels);
}

TEST_CASE("truncated files raise an error naming the byte offset") {
  TempDir tmp;
  Tensor t = Tensor::full(Shape{4, 4}, 1.0);
  save_tensor(tmp.file("t.ntsr"), t);
  std::string bytes = io::read_file(tmp.file("t.ntsr"));
  io::atomic_write(tmp.file("cut.ntsr"), bytes.substr(0, bytes.size() - 7));
  try {
    load_tensor(tmp.file("cut.ntsr"));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.offset >= 0);
    CHECK(std::string(e.what()).find("truncated at byte") != std::string::npos);
  }
}

TEST_CASE("bad magic and bad version raise distinct errors") {
  TempDir tmp;
  io::atomic_write(tmp.file("junk.ntsr"), "JUNKJUNKJUNKJUNK");
  try {
    load_tensor(tmp.file("junk.ntsr"));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }

  Tensor t = Tensor::full(Shape{2}, 1.0);
  save_tensor(tmp.file("v.ntsr"), t);
  std::string bytes = io::read_file(tmp.file("v.ntsr"));
  bytes[4] = 9;  // version byte
  io::atomic_write(tmp.file("v9.ntsr"), bytes);
  try {
    load_tensor(tmp.file("v9.ntsr"));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("checkpoints: save/load round trip is bit-identical") {
  TempDir tmp;
  Rng rng(11);
  ckpt::Checkpoint c;
  c.meta_json = "{\"type\":\"test\"}";
  c.tensors.emplace_back("a.w", Tensor::randn(Shape{3, 3}, rng));
  c.tensors.emplace_back("b.w", Tensor::randn(Shape{7}, rng));
  c.opt_tensors.emplace_back("opt/m/0", Tensor::randn(Shape{3, 3}, rng));
  c.rng_state = {1, 2, 3, 0xffffffffffffffffull};
  c.save(tmp.file("c.nckp"));

  ckpt::Checkpoint back = ckpt::Checkpoint::load(tmp.file("c.nckp"));
  CHECK(back.meta_json == c.meta_json);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].first == "a.w");
  for (std::int64_t i = 0; i < 9; ++i)
    CHECK(back.tensors[0].second[i] == c.tensors[0].second[i]);
  CHECK(back.rng_state == c.rng_state);

  // a second save of the loaded checkpoint is byte-identical
  back.save(tmp.file("c2.nckp"));
  CHECK(io::read_file(tmp.file("c.nckp")) == io::read_file(tmp.file("c2.nckp")));
}

TEST_CASE("checkpoints: truncation and version errors, no partial state") {
  TempDir tmp;
  ckpt::Checkpoint c;
  c.meta_json = "{}";
  c.tensors.emplace_back("w", Tensor::full(Shape{5}, 2.0));
  c.save(tmp.file("c.nckp"));
  std::string bytes = io::read_file(tmp.file("c.nckp"));

  io::atomic_write(tmp.file("cut.nckp"), bytes.substr(0, bytes.size() / 2));
  try {
    ckpt::Checkpoint::load(tmp.file("cut.nckp"));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.offset > 0);
  }

  std::string vbytes = bytes;
  vbytes[4] = 42;  // version u32 little endian
  io::atomic_write(tmp.file("v.nckp"), vbytes);
  CHECK_THROWS_AS(ckpt::Checkpoint::load(tmp.file("v.nckp")), IoError);
}
