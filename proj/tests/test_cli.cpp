#include <doctest.h>

#include "cli.hpp"
#include "disco/audio.hpp"
#include "disco/formats.hpp"
#include "disco/io.hpp"

#include <filesystem>
#include <random>
#include <sstream>

using namespace disco;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(preset = desk
[model]
ssl_dim = 16
content.layers = 1
content.heads = 2
content.d_model = 16
content.d_ffn = 32
token_module.layers = 1
token_module.heads = 2
token_module.d_model = 16
token_module.d_ffn = 32
mel_module.layers = 1
mel_module.heads = 2
mel_module.d_model = 16
mel_module.d_ffn = 32
feature_decoder.layers = 1
feature_decoder.heads = 2
feature_decoder.d_model = 16
feature_decoder.d_ffn = 32
global.width = 8
global.embed_dim = 6
global.pool_hidden = 4
postnet.channels = 4
[train]
steps = 6
disc_channels = 2
)";

struct Run {
  int code;
  std::string out, err;
};

Run disco_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "disco");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// A scratch directory with a config and a four-file corpus.
struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("disco_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    atomic_write(dir / "tiny.cfg", kTiny);
    REQUIRE(disco_cli({"synth-corpus", "--out", p("corpus"), "--per-speaker", "2", "--seconds", "2"}).code == 0);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }
  std::string trained() {
    if (!fs::exists(dir / "m.knck"))
      REQUIRE(disco_cli({"train", "-q", "--config", p("tiny.cfg"), "--corpus", p("corpus"), "--out", p("m.knck")}).code ==
              0);
    return p("m.knck");
  }
};

}  // namespace

TEST_CASE("usage and config errors") {
  CHECK(disco_cli({}).code == cli::kUsage);
  CHECK(disco_cli({"bogus"}).code == cli::kUsage);
  CHECK(disco_cli({"train", "--corpus", "x"}).code == cli::kUsage);  // --out missing
  const Run help = disco_cli({"train", "--help"});
  CHECK(help.code == 0);
  for (const char* flag : {"--config", "--preset", "--set", "--seed", "--corpus", "--out", "--curve"})
    CHECK(help.out.find(flag) != std::string::npos);
  Workspace w;
  const Run bad = disco_cli({"train", "--set", "model.token_rate=13", "--corpus", w.p("corpus"), "--out", w.p("m")});
  CHECK(bad.code == cli::kConfig);
  CHECK(bad.err.find("token_rate") != std::string::npos);
  const Run missing = disco_cli({"train", "--config", w.p("tiny.cfg"), "--corpus", w.p("nowhere"), "--out", w.p("m")});
  CHECK(missing.code == cli::kData);
  CHECK(missing.err.find(w.p("nowhere")) != std::string::npos);
  CHECK_FALSE(fs::exists(w.dir / "m"));
}

TEST_CASE("training is reproducible and never overwrites silently") {
  Workspace w;
  const std::string ck = w.trained();
  const std::string curve = read_file(ck + ".loss.csv");
  std::istringstream lines(curve);
  int rows = -1;  // header
  for (std::string l; std::getline(lines, l);) ++rows;
  CHECK(rows == 6);

  const auto args = std::vector<std::string>{"train", "-q", "--config", w.p("tiny.cfg"), "--corpus", w.p("corpus"),
                                             "--out", ck};
  CHECK(disco_cli(args).code == cli::kExists);
  auto forced = args;
  forced.push_back("--force");
  REQUIRE(disco_cli(forced).code == 0);
  CHECK(read_file(ck + ".loss.csv") == curve);

  auto other = forced;
  other.insert(other.end(), {"--seed", "9"});
  REQUIRE(disco_cli(other).code == 0);
  CHECK(read_file(ck + ".loss.csv") != curve);
}

TEST_CASE("validation keeps the best checkpoint") {
  Workspace w;
  const std::string plain = w.trained();
  const Run r = disco_cli({"train", "--config", w.p("tiny.cfg"), "--corpus", w.p("corpus"), "--valid", w.p("corpus"),
                           "--valid-every", "2", "--out", w.p("v.knck")});
  REQUIRE(r.code == 0);
  std::size_t passes = 0;
  for (std::size_t at = r.err.find("valid l_mel"); at != std::string::npos; at = r.err.find("valid l_mel", at + 1))
    ++passes;
  CHECK(passes == 3 + (r.err.find("kept step") != std::string::npos));
  // the final weights are kept unless an earlier pass scored lower
  CHECK((read_file(w.p("v.knck")) == read_file(plain)) == (r.err.find("kept step") == std::string::npos));
  CHECK(disco_cli({"train", "--corpus", w.p("corpus"), "--out", w.p("x"), "--valid-every", "0"}).code == cli::kUsage);
}

TEST_CASE("encode, decode, resynth and convert") {
  Workspace w;
  const std::string ck = w.trained(), wav = w.p("corpus/spk0_utt00.wav");
  REQUIRE(disco_cli({"encode", "--checkpoint", ck, "--wav", wav, "--tokens", w.p("t.kntk"), "--embedding",
                     w.p("e.knge")})
              .code == 0);
  const TokenFile tf = read_token_file(w.p("t.kntk"));
  CHECK(tf.token_rate_hz == 12.5);
  CHECK(tf.codebook_size == 12800);
  CHECK(tf.tokens.size() == 25);  // 2 s at 12.5 Hz
  CHECK(read_embedding_file(w.p("e.knge")).values.size() == 6);

  REQUIRE(disco_cli({"decode", "--checkpoint", ck, "--tokens", w.p("t.kntk"), "--embedding", w.p("e.knge"), "--wav",
                     w.p("d.wav"), "--mel-csv", w.p("d.csv"), "--mel", w.p("d.knft")})
              .code == 0);
  CHECK(read_feature_file(w.p("d.knft")).values.rows() == 188);  // 2 s of 100 Hz frames, rounded from tokens
  CHECK(load_wav(w.p("d.wav")).samples.size() == 188u * 256u);

  REQUIRE(disco_cli({"resynth", "--checkpoint", ck, "--wav", wav, "--out", w.p("r.wav")}).code == 0);
  REQUIRE(disco_cli({"convert", "--checkpoint", ck, "--source", wav, "--reference", wav, "--out", w.p("c.wav")}).code ==
          0);
  CHECK(read_file(w.p("r.wav")) == read_file(w.p("c.wav")));
  CHECK(load_wav(w.p("r.wav")).samples.size() == load_wav(wav).samples.size());

  // Token metadata that disagrees with the checkpoint is rejected.
  TokenFile wrong = tf;
  wrong.token_rate_hz = 25.0;
  write_token_file(w.p("w.kntk"), wrong, true);
  CHECK(disco_cli({"decode", "--checkpoint", ck, "--tokens", w.p("w.kntk"), "--embedding", w.p("e.knge"), "--wav",
                   w.p("x.wav")})
            .code == cli::kData);
  CHECK_FALSE(fs::exists(w.dir / "x.wav"));

  REQUIRE(disco_cli({"posttrain", "-q", "--checkpoint", ck, "--corpus", w.p("corpus"), "--out", w.p("p.knck"), "--set",
                     "train.steps=2"})
              .code == 0);
  CHECK(disco_cli({"resynth", "--checkpoint", w.p("p.knck"), "--wav", wav, "--out", w.p("p.wav"), "--stream"}).code ==
        0);
}

TEST_CASE("eval subcommands") {
  Workspace w;
  TokenFile uniform;
  uniform.codebook_size = 12800;
  for (int i = 0; i < 12800; ++i) uniform.tokens.push_back(static_cast<std::uint16_t>(i));
  write_token_file(w.p("u.kntk"), uniform, true);
  const Run ent = disco_cli({"eval", "entropy", "--tokens", w.p("u.kntk")});
  CHECK(ent.code == 0);
  CHECK(ent.out == "entropy  1.000\n");

  atomic_write(w.p("trials.csv"), "score,label\n0.9,same\n0.8,same\n0.2,different\n0.1,different\n");
  CHECK(disco_cli({"eval", "eer", "--trials", w.p("trials.csv"), "--csv"}).out == "metric,value\neer,0\n");

  atomic_write(w.p("ref.txt"), "a b c\nd e\n");
  atomic_write(w.p("hyp.txt"), "a x c\nd e\n");
  CHECK(disco_cli({"eval", "wer", "--ref", w.p("ref.txt"), "--hyp", w.p("hyp.txt"), "--csv"}).out ==
        "metric,value\nwer,0.2\n");

  atomic_write(w.p("scores.csv"), "condition,score\nref,80\nref,80\nref,80\nsys,40\nsys,60\n");
  const Run mu = disco_cli({"eval", "mushra", "--scores", w.p("scores.csv"), "--csv"});
  CHECK(mu.out.find("ref,80,80,80") != std::string::npos);

  std::vector<std::int64_t> toks{0, 1, 2, 3};
  TokenFile small;
  small.codebook_size = 4;
  small.levels.clear();
  small.tokens = {0, 0, 1, 1};
  write_token_file(w.p("s.kntk"), small, true);
  atomic_write(w.p("labels.txt"), "0 0 1 1");
  const Run pn = disco_cli({"eval", "pnmi", "--tokens", w.p("s.kntk"), "--labels", w.p("labels.txt"), "--joint",
                            w.p("joint.csv"), "--csv"});
  CHECK(pn.out.find("pnmi,1\n") != std::string::npos);
  CHECK(read_file(w.p("joint.csv")) == "label,token,count\n0,0,2\n1,1,2\n");
  atomic_write(w.p("labels.txt"), "0 0 1");
  CHECK(disco_cli({"eval", "pnmi", "--tokens", w.p("s.kntk"), "--labels", w.p("labels.txt")}).code == cli::kData);

  const std::string wav = w.p("corpus/spk1_utt00.wav");
  const Run f0 = disco_cli({"eval", "f0corr", "--ref", wav, "--hyp", wav, "--csv", "--overlay", w.p("ov.csv")});
  CHECK(f0.out.find("f0corr,1\n") != std::string::npos);
  CHECK(fs::exists(w.dir / "ov.csv"));

  for (const char* name : {"a", "b", "c"}) {
    EmbeddingFile e;
    e.values = {float(name[0] - 'a'), 1.0f, 0.5f};
    write_embedding_file(w.p(std::string(name) + ".knge"), e, true);
  }
  const Run pca = disco_cli({"eval", "pca", "--embeddings", w.p("a.knge"), w.p("b.knge"), w.p("c.knge"), "--out",
                             w.p("pca.csv"), "--csv"});
  CHECK(pca.out.find("explained_pc1,1\n") != std::string::npos);

  CHECK(disco_cli({"eval", "abx", "--synthetic", "100", "--separation", "3", "--csv"}).out.find("abx_error,0\n") !=
        std::string::npos);

  // k-means over synthetic features, then assignment.
  REQUIRE(disco_cli({"features", "--wav", wav, "--dims", "8", "--out", w.p("f.knft")}).code == 0);
  REQUIRE(disco_cli({"kmeans", "fit", "--features", w.p("f.knft"), "-k", "5", "--out", w.p("c.knft")}).code == 0);
  REQUIRE(disco_cli({"kmeans", "assign", "--centroids", w.p("c.knft"), "--features", w.p("f.knft"), "--tokens",
                     w.p("k.kntk")})
              .code == 0);
  const TokenFile kt = read_token_file(w.p("k.kntk"));
  CHECK(kt.codebook_size == 5);
  CHECK(kt.tokens.size() == 100);
}

TEST_CASE("file formats round-trip bitwise") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> tok(0, 12799);
  TokenFile t;
  for (int i = 0; i < 333; ++i) t.tokens.push_back(static_cast<std::uint16_t>(tok(rng)));
  const std::string tb = encode_token_file(t);
  CHECK(encode_token_file(decode_token_file(tb)) == tb);

  EmbeddingFile e;
  std::normal_distribution<float> g;
  for (int i = 0; i < 128; ++i) e.values.push_back(g(rng));
  const std::string eb = encode_embedding_file(e);
  CHECK(encode_embedding_file(decode_embedding_file(eb)) == eb);

  FeatureFile f;
  f.rate_hz = 93.75;
  f.values = MatF::Random(17, 5);
  const std::string fb = encode_feature_file(f);
  CHECK(encode_feature_file(decode_feature_file(fb)) == fb);

  for (WavEncoding enc : {WavEncoding::Pcm16, WavEncoding::Float32}) {
    Audio a;
    for (int i = 0; i < 1000; ++i) a.samples.push_back(0.9f * std::sin(0.05f * float(i)));
    const std::string wb = encode_wav(a, enc);
    CHECK(encode_wav(decode_wav(wb), enc) == wb);
  }
  CHECK_THROWS_AS(decode_token_file(tb.substr(0, tb.size() - 1)), DataError);
}
