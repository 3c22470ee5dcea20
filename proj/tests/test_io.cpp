#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jtc/io.hpp"
#include "jtc/pipeline.hpp"

using namespace jtc;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("jtc_test_" + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

}  // namespace

TEST_CASE("load_corpus") {
    TempDir tmp;
    const auto path = tmp.file("corpus.jsonl");

    write_file(path, "");
    CHECK(load_corpus(path).empty());

    write_file(path,
               R"({"id":"a","text":"one two"})"
               "\n"
               R"({"id":"b","text":"three","positive":"four","negatives":["n1","n2"]})"
               "\n"
               R"({"id":"c","text":"five"})"
               "\n");
    auto records = load_corpus(path);
    REQUIRE(records.size() == 3);
    CHECK(records[0].id == "a");
    CHECK(records[1].positive.value() == "four");
    CHECK(records[1].negatives.size() == 2);
    CHECK(records[2].id == "c");

    write_file(path, R"({"id":"a","text":"x"})" "\n" R"({"id":"a","text":"y"})" "\n");
    CHECK_THROWS_WITH_AS(load_corpus(path),
                         doctest::Contains("duplicate id 'a'"), std::runtime_error);

    write_file(path, "not json\n");
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 1"),
                         std::runtime_error);

    CHECK_THROWS_AS(load_corpus(tmp.file("missing.jsonl")), std::runtime_error);
}

TEST_CASE("teacher file round trip") {
    TempDir tmp;
    const auto path = tmp.file("teacher.jsonl");
    std::vector<TeacherRecord> records{
        {"a", {1.0, 2.0, -0.5}, {0.25, 0.5, 0.75, 1.0}},
        {"b", {0.1, 0.2, 0.3}, {1.5, -1.5, 2.5, -2.5}},
    };
    save_teacher_file(path, records);
    auto loaded = load_teacher_file(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].e_qwen == records[0].e_qwen);
    CHECK(loaded[1].e_qzhou == records[1].e_qzhou);
}

TEST_CASE("embeddings round trip bit exactly") {
    Rng rng(1);
    Tensor rows = Tensor::uniform({3, 5}, -1, 1, rng);
    std::ostringstream out;
    write_embeddings(out, {"x", "y", "z"}, rows);
    std::istringstream in(out.str());
    auto loaded = read_embeddings(in);
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[1].first == "y");
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 5; ++c)
            CHECK(loaded[r].second[c] == rows.at(r, c));  // exact, not approximate
}

TEST_CASE("checkpoint round trip bit exactly") {
    TempDir tmp;
    EncoderConfig cfg;
    cfg.vocab_size = 16;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.mlp_hidden = 8;
    cfg.output_dim = 4;
    Rng rng(2);
    EncoderModel model = EncoderModel::init(cfg, rng);

    const auto path = tmp.file("model.ckpt");
    save_checkpoint(path, model, 2);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.completed_stage == 2);
    auto expect = model.parameters();
    for (auto& [name, t] : loaded.model.parameters()) CHECK(t.data() == expect.at(name).data());

    // saving the loaded model reproduces the file byte for byte
    const auto path2 = tmp.file("model2.ckpt");
    save_checkpoint(path2, loaded.model, 2);
    std::ifstream a(path), b(path2);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
}

TEST_CASE("checkpoint rejects corrupt files") {
    TempDir tmp;
    const auto path = tmp.file("bad.ckpt");
    write_file(path, "not a checkpoint\n");
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), std::runtime_error);
}

TEST_CASE("config parsing") {
    TempDir tmp;
    const auto path = tmp.file("run.conf");
    write_file(path,
               "# comment\n"
               "steps = 250\n"
               "learning_rate = 0.002  # inline comment\n"
               "corpus = data/corpus.jsonl\n"
               "\n");
    auto cfg = Config::from_file(path);
    CHECK(cfg.get_int("steps", 0) == 250);
    CHECK(cfg.get_double("learning_rate", 0.0) == doctest::Approx(0.002));
    CHECK(cfg.get("corpus", "") == "data/corpus.jsonl");
    CHECK(cfg.get("missing", "fallback") == "fallback");

    write_file(path, "just some words\n");
    CHECK_THROWS_AS(Config::from_file(path), std::runtime_error);
}

TEST_CASE("metrics records serialize as json lines") {
    MetricsRecord m;
    m.step = 3;
    m.stage = 2;
    m.lr = 0.001;
    m.ratio = 0.33333;
    m.losses["cosine"] = 0.5;
    std::ostringstream out;
    append_metrics(out, m);
    auto j = nlohmann::json::parse(out.str());
    CHECK(j["step"] == 3);
    CHECK(j["ratio"] == doctest::Approx(0.33333));
    CHECK(j["losses"]["cosine"] == doctest::Approx(0.5));
}
