#include <doctest.h>

#include <sstream>

#include "cardiogen/cli/commands.hpp"
#include "cardiogen/numerics/io.hpp"

using namespace cardiogen;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("cardiogen_unit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cardiogen");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

// 16x16 frames and a two-layer everything, small enough for a unit test.
const char* kTinyConfig = R"(# tiny pipeline
data.n_clips = 6
data.height = 16
data.width = 16
data.r_ed_lo = 5
data.r_ed_hi = 6
tokenizer.dim = 16
tokenizer.depth_spatial = 1
tokenizer.depth_temporal = 1
tokenizer.heads = 2
tokenizer.head_dim = 8
tokenizer.bits = 6
disc.width1 = 8
disc.width2 = 8
percep.width = 8
tok_train.steps = 3
tok_train.batch = 2
tok_train.log_every = 1
generator.dim = 16
generator.depth = 1
generator.heads = 2
generator.head_dim = 8
generator.critic_dim = 8
generator.critic_depth = 1
generator.critic_heads = 2
gen_train.steps = 3
gen_train.batch = 2
gen_train.warmup_steps = 1
gen_train.log_every = 1
generate.steps = 3
eval.n_clips = 3
)";

}  // namespace

TEST_CASE("config parsing, typed validation and hashing") {
    RunConfig c;
    CHECK(c.get_size("data.n_clips") == 200);
    CHECK(c.get_string("tokenizer.quantizer") == "lfq");
    c.parse_text("# comment\n\nseed = 7\ngenerate.lambda_cfg=2.5\n", "inline");
    CHECK(c.seed() == 7);
    CHECK(c.get_real("generate.lambda_cfg") == 2.5);
    c.apply_override("generate.use_ema=1");
    CHECK(c.get_bool("generate.use_ema"));
    CHECK(c.raw("generate.use_ema") == "true");

    auto message = [](auto&& fn) {
        try {
            fn();
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message([&] { c.set("no.such.key", "1"); }).find("unknown config key") != std::string::npos);
    CHECK(message([&] { c.parse_text("seed = 1\nbogus = 2\n", "file.cfg"); }).find("file.cfg:2") !=
          std::string::npos);
    CHECK_THROWS_AS(c.set("data.n_clips", "-3"), ConfigError);
    CHECK_THROWS_AS(c.set("data.n_clips", "two"), ConfigError);
    CHECK_THROWS_AS(c.set("generate.mode", "text"), ConfigError);
    CHECK_THROWS_AS(c.set("generate.use_ema", "maybe"), ConfigError);
    CHECK_THROWS_AS(c.apply_override("seed"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_file("/nonexistent/run.cfg"), MissingArtifactError);

    RunConfig a, b;
    CHECK(a.hash() == b.hash());
    CHECK(a.resolved() == b.resolved());
    b.set("seed", "1");
    CHECK(a.hash() != b.hash());
    CHECK(a.hash_hex().size() == 16);
    // Equivalent spellings resolve identically.
    a.set("seed", "01");
    CHECK(a.hash() == b.hash());

    RunConfig bad;
    bad.set("data.ef_lo", "0.7");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
}

TEST_CASE("command line exit codes and error lines") {
    const auto dir = scratch("cli_errors");
    auto r = cli({});
    CHECK(r.code == 2);
    r = cli({"datagen"});
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error: usage:", 0) == 0);
    r = cli({"datagen", "--out", (dir / "d").string(), "--set", "nope=1"});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: config:", 0) == 0);
    r = cli({"train-generator", "--out", (dir / "g").string(), "--set", "paths.tokenizer=" + (dir / "none").string()});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: missing-artifact:", 0) == 0);
    CHECK(r.err.find("tokenizer") != std::string::npos);
    CHECK(r.err.find((dir / "none").string()) != std::string::npos);
}

TEST_CASE("tiny pipeline end to end, with byte-identical generation") {
    const auto dir = scratch("cli_pipeline");
    write_text_file(dir / "tiny.cfg", kTinyConfig);
    const std::string cfg = (dir / "tiny.cfg").string();
    auto step = [&](std::vector<std::string> args) {
        args.insert(args.begin() + 1, {"--config", cfg});
        const auto r = cli(args);
        INFO(r.err);
        REQUIRE(r.code == 0);
        return r;
    };
    const std::string corpus = (dir / "corpus").string(), tok = (dir / "tok").string(),
                      gen = (dir / "gen").string();
    auto r = step({"datagen", "--out", corpus});
    CHECK(r.out.find("progress datagen") != std::string::npos);
    CHECK(fs::exists(dir / "corpus" / "manifest.csv"));
    const std::string resolved = read_text_file(dir / "corpus" / "resolved_config.txt");
    CHECK(resolved.find("# build ") != std::string::npos);
    CHECK(resolved.find("# config_hash ") != std::string::npos);
    CHECK(resolved.find("data.n_clips = 6") != std::string::npos);

    step({"train-tokenizer", "--out", tok, "--set", "paths.corpus=" + corpus});
    CHECK(fs::exists(dir / "tok" / "manifest.txt"));
    CHECK(fs::exists(dir / "tok" / "roundtrip.json"));
    step({"train-generator", "--out", gen, "--set", "paths.corpus=" + corpus, "--set", "paths.tokenizer=" + tok});
    CHECK(fs::exists(dir / "gen" / "manifest.txt"));

    const std::string ecg = corpus + "/clips/clip_00000/ecg.ept";
    std::vector<std::string> gen_args{"generate", "--set", "paths.tokenizer=" + tok, "--set",
                                      "paths.generator=" + gen, "--set", "generate.ecg=" + ecg};
    auto g1 = gen_args, g2 = gen_args;
    g1.insert(g1.end(), {"--out", (dir / "g1").string()});
    g2.insert(g2.end(), {"--out", (dir / "g2").string()});
    step(g1);
    step(g2);
    CHECK(read_text_file(dir / "g1" / "clip.ept") == read_text_file(dir / "g2" / "clip.ept"));
    CHECK(read_text_file(dir / "g1" / "tokens_0.ept") == read_text_file(dir / "g2" / "tokens_0.ept"));
    CHECK(read_text_file(dir / "g1" / "provenance.jsonl").find("\"config_hash\"") != std::string::npos);

    step({"evaluate", "--out", (dir / "ev").string(), "--set", "paths.corpus=" + corpus, "--set",
          "paths.tokenizer=" + tok, "--set", "paths.generator=" + gen});
    const std::string summary = read_text_file(dir / "ev" / "summary.json");
    CHECK(summary.find("\"unit\": \"fraction\"") != std::string::npos);
    CHECK(read_text_file(dir / "ev" / "report.csv").rfind("clip_id,ef_reference", 0) == 0);

    step({"inspect-tokens", "--out", (dir / "it").string(), "--set", "paths.tokenizer=" + tok, "--set",
          "inspect.clip=" + corpus + "/clips/clip_00000/frames"});
    CHECK(fs::exists(dir / "it" / "tokens.txt"));
    // Inputs are left untouched.
    CHECK(read_text_file(dir / "corpus" / "resolved_config.txt") == resolved);
}
