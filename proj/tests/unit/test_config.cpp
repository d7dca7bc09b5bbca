#include <doctest.h>

#include "ostr/checkpoint.hpp"
#include "ostr/config.hpp"
#include "ostr/errors.hpp"

#include "temp_dir.hpp"

#include <fstream>
#include <sstream>

using namespace ostr;

namespace {

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config: defaults, overrides, canonical round trip")
{
    auto c = parse_config("# comment\n\nd = 32\nlr=0.05\ntpt=off\nmetric=scaled-cosine\nsplit_mode=OSTR\n"
                          "group.latin=ab\nnoc_group=latin\n");
    CHECK(c.model.feature_dim == 32);
    CHECK(c.lr == 0.05);
    CHECK_FALSE(c.model.tpt);
    CHECK(c.model.metric == Metric::ScaledCosine);
    CHECK(c.split_mode == SplitMode::OSTR);
    CHECK(c.split.groups.at("latin") == std::vector<CharId>{U'a', U'b'});
    CHECK(c.f_s == 0.8);
    CHECK(c.b_max == 512);
    CHECK(c.lambda_emb == 0.3);
    CHECK(c.model.h == 0.5);

    const auto text = serialize_config(c);
    const auto back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.lr == c.lr);
    CHECK(back.split.groups == c.split.groups);
}

TEST_CASE("config: rejected inputs")
{
    CHECK_THROWS_AS(parse_config("learning_rate=0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr=abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("epochs=-1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("f_s=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("f_s=1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("h=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lambda_emb=-0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tpt=maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr=0.1\nlr=0.2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("max_len=12\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("input_width=64\nmax_len=5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("split_mode=closed\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr_schedule=step\n"), ConfigError);
}

TEST_CASE("resolve_charset expressions")
{
    const std::vector<CharId> u{U'a', U'b', U'c', U'd', U'e'};
    CHECK(resolve_charset("all", u) == u);
    CHECK(resolve_charset("first:2", u) == std::vector<CharId>{U'a', U'b'});
    CHECK(resolve_charset("last:2", u) == std::vector<CharId>{U'd', U'e'});
    CHECK(resolve_charset("range:1:3", u) == std::vector<CharId>{U'b', U'c'});
    CHECK(resolve_charset("chars:eba", u) == std::vector<CharId>{U'a', U'b', U'e'});
    CHECK_THROWS_AS(resolve_charset("first:6", u), ConfigError);
    CHECK_THROWS_AS(resolve_charset("chars:az", u), ConfigError);
    CHECK_THROWS_AS(resolve_charset("some", u), ConfigError);
}

TEST_CASE("container: encode/decode round trip and corruption")
{
    Container c;
    const std::vector<float> v{1.5f, -0.0f, 3.25f, 1e-30f, 7.0f, -2.0f};
    c.put_array("w", {2, 3}, v);
    c.put_bytes("meta", std::string("a\0b", 3));
    const auto blob = c.encode();
    CHECK(blob.substr(0, 5) == "OSTR1");
    auto d = Container::decode(blob);
    CHECK(d.shape("w") == Shape{2, 3});
    CHECK(d.array("w") == v);
    CHECK(d.bytes("meta") == std::string("a\0b", 3));
    CHECK(d.encode() == blob);
    CHECK_THROWS_AS(c.put_bytes("w", ""), ContractError);
    CHECK_THROWS_AS(Container::decode(blob.substr(0, blob.size() - 1)), LoadError);
    CHECK_THROWS_AS(Container::decode("OSTR2" + blob.substr(5)), LoadError);
    CHECK_THROWS_AS(Container::decode(blob + "x"), LoadError);
    CHECK_THROWS_AS(d.array("meta"), LoadError);
    CHECK_THROWS_AS(d.bytes("missing"), LoadError);
}

TEST_CASE("checkpoint and bank files round trip byte for byte")
{
    TempDir dir;
    RunConfig cfg;
    cfg.model.feature_dim = 16;
    cfg.lr = 0.0123;
    Recognizer<float> model(cfg.model, 5);
    CheckpointMeta meta;
    meta.config = cfg;
    meta.rng_state = Rng(9).serialize();
    meta.iteration = 42;
    save_checkpoint(dir.path() / "a.ostr", model, meta);
    auto loaded = load_checkpoint(dir.path() / "a.ostr");
    REQUIRE(loaded.model);
    CHECK(loaded.meta.iteration == 42);
    CHECK(loaded.meta.config.lr == 0.0123);
    save_checkpoint(dir.path() / "b.ostr", *loaded.model, loaded.meta);
    CHECK(slurp(dir.path() / "a.ostr") == slurp(dir.path() / "b.ostr"));

    BaselineRecognizer<float> base(cfg.model, {U'x', U'y'}, 5);
    save_checkpoint(dir.path() / "c.ostr", base, meta);
    auto lb = load_checkpoint(dir.path() / "c.ostr");
    REQUIRE(lb.baseline);
    CHECK(lb.baseline->charset == std::vector<CharId>{U'x', U'y'});
    save_checkpoint(dir.path() / "d.ostr", *lb.baseline, lb.meta);
    CHECK(slurp(dir.path() / "c.ostr") == slurp(dir.path() / "d.ostr"));

    auto bank = build_bank(model, render_procedural_alphabet(1, 5, 2));
    save_bank(dir.path() / "bank.ostr", bank);
    auto bank2 = load_bank(dir.path() / "bank.ostr");
    CHECK(bank2 == bank);
    save_bank(dir.path() / "bank2.ostr", bank2);
    CHECK(slurp(dir.path() / "bank.ostr") == slurp(dir.path() / "bank2.ostr"));

    auto blob = slurp(dir.path() / "a.ostr");
    auto c = Container::decode(blob);
    Container broken;
    for (const auto& n : c.names())
        if (n != "eos") {
            if (n == "kind" || n == "config" || n == "rng" || n == "iteration")
                broken.put_bytes(n, c.bytes(n));
            else
                broken.put_array(n, c.shape(n), c.array(n));
        }
    broken.save(dir.path() / "broken.ostr");
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "broken.ostr"), LoadError);
}
