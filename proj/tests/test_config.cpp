#include <doctest.h>

#include "disco/checkpoint.hpp"
#include "disco/config.hpp"
#include "disco/io.hpp"
#include "oracles.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace disco;

namespace {

const char* kTiny = R"(preset = desk
[model]
ssl_dim = 8
content.layers = 2
content.heads = 2
content.d_model = 8
content.d_ffn = 16
token_module.layers = 1
token_module.heads = 2
token_module.d_model = 8
token_module.d_ffn = 16
mel_module.layers = 1
mel_module.heads = 2
mel_module.d_model = 8
mel_module.d_ffn = 16
feature_decoder.layers = 1
feature_decoder.heads = 2
feature_decoder.d_model = 8
feature_decoder.d_ffn = 16
global.width = 8
global.embed_dim = 6
global.pool_hidden = 4
postnet.channels = 4
mel.n_mels = 10
[train]
disc_channels = 2
disc_layers = 2
[features]
n_mels = 24
)";

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "t.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

NormStats stats_for(int d) {
  NormStats s;
  s.mean = Eigen::RowVectorXd::LinSpaced(d, -1.0, 1.0);
  s.std = Eigen::RowVectorXd::Constant(d, 0.3);
  return s;
}

}  // namespace

TEST_CASE("presets") {
  Config desk = preset_config("desk");
  CHECK(desk.model.ssl_dim == 768);
  CHECK(desk.model.codebook_size() == 12800);
  CHECK(desk.train.steps == 2000);
  Config paper = preset_config("paper", 25.0);
  CHECK(paper.model.token_rate == 25.0);
  CHECK(paper.train.batch == 128);
  CHECK_THROWS_AS(preset_config("huge"), ConfigError);
}

TEST_CASE("parse reads sections, comments and overrides") {
  Config c = parse_config(kTiny);
  CHECK(c.model.ssl_dim == 8);
  CHECK(c.ssl.dims == 8);
  CHECK(c.model.mel.n_mels == 10);
  CHECK(c.train.disc_channels == 2);
  Config d = parse_config("# comment\npreset = paper\n; another\n[train]\nalpha = 0.5\n");
  CHECK(d.preset == "paper");
  CHECK(d.train.alpha == 0.5);
  CHECK(d.train.steps == 150000);
}

TEST_CASE("bad configs name the line and the field") {
  const std::string rate = error_of("[model]\ntoken_rate = 13\n");
  CHECK(rate.find("t.cfg:2") != std::string::npos);
  CHECK(rate.find("token_rate") != std::string::npos);
  CHECK(error_of("[train]\nalpah = 1\n").find("t.cfg:2") != std::string::npos);
  CHECK_FALSE(error_of("[nope]\n").empty());
  CHECK_FALSE(error_of("[train]\nsteps\n").empty());
  CHECK_FALSE(error_of("[train]\nsteps = ten\n").empty());
  CHECK_FALSE(error_of("[train]\nsteps = -1\n").empty());
  CHECK_FALSE(error_of("[model]\nquantizer = rvq\n").empty());
  CHECK(error_of(kTiny).empty());
}

TEST_CASE("overrides propagate and are validated") {
  Config c = preset_config("desk");
  apply_override(c, "train.alpha", "0");
  CHECK(c.train.alpha == 0.0);
  apply_override(c, "model.global_branch", "off");
  CHECK_FALSE(c.model.global_on);
  apply_override(c, "model.ssl_dim", "32");
  CHECK(c.ssl.dims == 32);
  CHECK_THROWS_AS(apply_override(c, "train.gamma_ray", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "train.peak_lr", "-1"), ConfigError);
}

TEST_CASE("render and parse round-trip every key") {
  Config c = parse_config(kTiny);
  c.train.beta = 1.0 / 30.0;
  c.train.seed = 77;
  c.model.quantizer = QuantizerKind::VqEma;
  c.model.pooling = Pooling::Average;
  c.model.fsq.levels = {7, 5, 3};
  const std::string text = render_config(c);
  const Config back = parse_config(text);
  CHECK(render_config(back) == text);
  CHECK(back.train.beta == c.train.beta);
  CHECK(back.model.fsq.levels == c.model.fsq.levels);
  for (const auto& k : config_keys()) CHECK(text.find(k.substr(k.find('.') + 1) + " = ") != std::string::npos);
}

TEST_CASE("checkpoint round-trip is bitwise") {
  Config c = parse_config(kTiny);
  c.train.seed = 5;
  Codec<float> codec = make_codec<float>(c.model, 123);  // different init than the config seed
  const NormStats st = stats_for(c.model.ssl_dim);

  SUBCASE("codec only") {
    const std::string a = encode_checkpoint(c, codec, st);
    const Checkpoint ck = decode_checkpoint(a);
    CHECK(encode_checkpoint(ck.config, ck.codec, ck.stats) == a);
    CHECK_FALSE(ck.disc.has_value());
    CHECK(ck.codec.store.entries().front().var.value() == codec.store.entries().front().var.value());
  }
  SUBCASE("with vq codebook and discriminator") {
    c.model.quantizer = QuantizerKind::VqEma;
    c.model.vq.codebook_size = 16;
    Codec<float> vq = make_codec<float>(c.model, 9);
    std::mt19937_64 rng(3);
    vq.vq = VqEma(c.model.vq, 1);
    vq.vq.initialize(oracle::random_matrix(40, c.model.vq_dim, rng, 1.0));
    auto disc = make_discriminator<float>(c.model.mel.n_mels, c.train.disc_bands, c.train.disc_layers,
                                          c.train.disc_channels, 8);
    const std::string a = encode_checkpoint(c, vq, st, &disc);
    Checkpoint ck = decode_checkpoint(a);
    REQUIRE(ck.disc.has_value());
    CHECK(encode_checkpoint(ck.config, ck.codec, ck.stats, &*ck.disc) == a);
    CHECK(ck.codec.vq.codebook() == vq.vq.codebook());
    // the restored quantizer keeps working
    MatD x = oracle::random_matrix(12, c.model.vq_dim, rng, 1.0);
    auto q = ck.codec.vq.quantize(Var<double>::constant(x));
    CHECK_NOTHROW(ck.codec.vq.update(x, q.indices));
  }
}

TEST_CASE("corrupt checkpoints are data errors") {
  Config c = parse_config(kTiny);
  Codec<float> codec = make_codec<float>(c.model, 1);
  const std::string a = encode_checkpoint(c, codec, stats_for(c.model.ssl_dim));
  CHECK_THROWS_AS(decode_checkpoint("XXXX" + a.substr(4)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(a.substr(0, a.size() - 3)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(a + "x"), DataError);
  CHECK_THROWS_AS(decode_checkpoint(a.substr(0, 5)), DataError);
}

TEST_CASE("save refuses to overwrite without force") {
  const auto dir = std::filesystem::temp_directory_path() / "disco_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.knck";
  std::filesystem::remove(path);
  Config c = parse_config(kTiny);
  Codec<float> codec = make_codec<float>(c.model, 1);
  const NormStats st = stats_for(c.model.ssl_dim);
  save_checkpoint(path, c, codec, st, nullptr, false);
  CHECK_THROWS(save_checkpoint(path, c, codec, st, nullptr, false));
  CHECK_NOTHROW(save_checkpoint(path, c, codec, st, nullptr, true));
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.config.model.ssl_dim == 8);
  std::filesystem::remove_all(dir);
}
