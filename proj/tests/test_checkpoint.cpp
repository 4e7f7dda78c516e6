#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dlab/checkpoint.hpp"
#include "dlab/mitigation.hpp"
#include "dlab/model.hpp"
#include "dlab/rng.hpp"

using namespace dlab;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "dlab_ckpt_tests";
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

void spit(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool models_bitwise_equal(const TinyLmm& a, const TinyLmm& b) {
    if (a.params.size() != b.params.size()) return false;
    for (const auto& [name, p] : a.params) {
        if (!b.has_param(name)) return false;
        if (!bitwise_equal(p, b.param(name))) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("a saved model loads back bit for bit") {
    ModelConfig cfg;
    TinyLmm m = init_model(cfg, Rng(1));
    fs::path path = work_dir() / "round_trip.dlab";
    save_checkpoint(m, path.string());
    TinyLmm back = load_checkpoint(path.string(), cfg);
    CHECK(models_bitwise_equal(m, back));
    CHECK_FALSE(back.moe);
    CHECK(back.lora_targets.empty());
}

TEST_CASE("serialization is deterministic") {
    TinyLmm m = init_model(ModelConfig{}, Rng(2));
    fs::path a = work_dir() / "det_a.dlab";
    fs::path b = work_dir() / "det_b.dlab";
    save_checkpoint(m, a.string());
    save_checkpoint(m, b.string());
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("the default model serializes exactly forty tensors") {
    TinyLmm m = init_model(ModelConfig{}, Rng(3));
    fs::path path = work_dir() / "census.dlab";
    save_checkpoint(m, path.string());

    std::map<std::string, DenseTensor> raw = load_tensors(path.string());
    CHECK(raw.size() == 40);
    CHECK(raw.count("embed.w") == 1);
    CHECK(raw.count("block3.ln2") == 1);

    // The count field sits after the 4-byte magic and 4-byte version.
    std::string bytes = slurp(path);
    REQUIRE(bytes.size() > 12);
    CHECK(bytes.substr(0, 4) == "DLAB");
    std::uint32_t count = 0;
    for (int i = 0; i < 4; ++i)
        count |= static_cast<std::uint32_t>(
                     static_cast<unsigned char>(bytes[8 + i]))
                 << (8 * i);
    CHECK(count == 40);
}

TEST_CASE("tensor records are stored in name order") {
    TinyLmm m = init_model(ModelConfig{}, Rng(4));
    fs::path path = work_dir() / "ordering.dlab";
    save_checkpoint(m, path.string());
    std::string bytes = slurp(path);

    std::size_t pos = 12;
    std::string previous;
    for (int i = 0; i < 40; ++i) {
        std::uint16_t len =
            static_cast<std::uint16_t>(
                static_cast<unsigned char>(bytes[pos])) |
            static_cast<std::uint16_t>(
                static_cast<unsigned char>(bytes[pos + 1]))
                << 8;
        std::string name = bytes.substr(pos + 2, len);
        if (i > 0) CHECK(previous < name);
        previous = name;
        pos += 2 + len;
        std::uint8_t rank = static_cast<std::uint8_t>(bytes[pos + 1]);
        pos += 2;
        std::int64_t numel = 1;
        for (int r = 0; r < rank; ++r) {
            std::uint32_t dim = 0;
            for (int b = 0; b < 4; ++b)
                dim |= static_cast<std::uint32_t>(
                           static_cast<unsigned char>(bytes[pos + b]))
                       << (8 * b);
            numel *= dim;
            pos += 4;
        }
        pos += static_cast<std::size_t>(numel) * 4;
    }
    CHECK(pos == bytes.size());
}

TEST_CASE("generic tensor maps of every rank round trip") {
    std::map<std::string, DenseTensor> tensors;
    Rng rng(5);
    tensors["a"] = DenseTensor({3});
    tensors["b"] = DenseTensor({2, 3});
    tensors["c"] = DenseTensor({2, 3, 4});
    tensors["d"] = DenseTensor({1, 2, 3, 4});
    for (auto& [name, t] : tensors)
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();

    fs::path path = work_dir() / "ranks.dlab";
    save_tensors(tensors, path.string());
    std::map<std::string, DenseTensor> back = load_tensors(path.string());
    REQUIRE(back.size() == tensors.size());
    for (const auto& [name, t] : tensors) {
        CHECK(back.at(name).shape() == t.shape());
        CHECK(bitwise_equal(back.at(name), t));
    }
}

TEST_CASE("malformed files are rejected") {
    TinyLmm m = init_model(ModelConfig{}, Rng(6));
    fs::path good = work_dir() / "good.dlab";
    save_checkpoint(m, good.string());
    std::string bytes = slurp(good);

    fs::path bad = work_dir() / "bad.dlab";

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_tensors((work_dir() / "nope.dlab").string()),
                        FormatError);
    }
    SUBCASE("wrong magic") {
        std::string copy = bytes;
        copy[0] = 'X';
        spit(bad, copy);
        CHECK_THROWS_AS(load_tensors(bad.string()), FormatError);
    }
    SUBCASE("unsupported version") {
        std::string copy = bytes;
        copy[4] = 9;
        spit(bad, copy);
        CHECK_THROWS_AS(load_tensors(bad.string()), FormatError);
    }
    SUBCASE("truncated payload") {
        spit(bad, bytes.substr(0, bytes.size() - 5));
        CHECK_THROWS_AS(load_tensors(bad.string()), FormatError);
    }
    SUBCASE("truncated header") {
        spit(bad, bytes.substr(0, 6));
        CHECK_THROWS_AS(load_tensors(bad.string()), FormatError);
    }
    SUBCASE("trailing bytes") {
        spit(bad, bytes + "junk");
        CHECK_THROWS_AS(load_tensors(bad.string()), FormatError);
    }
    SUBCASE("unknown dtype") {
        // First record: magic(4) version(4) count(4) name_len(2) name(len).
        std::size_t name_len = static_cast<unsigned char>(bytes[12]) |
                               (static_cast<unsigned char>(bytes[13]) << 8);
        std::string copy = bytes;
        copy[14 + name_len] = 7;  // dtype byte
        spit(bad, copy);
        CHECK_THROWS_AS(load_tensors(bad.string()), FormatError);
    }
}

TEST_CASE("the loader validates the tensor census against the config") {
    ModelConfig cfg;
    TinyLmm m = init_model(cfg, Rng(7));
    fs::path path = work_dir() / "census_check.dlab";
    save_checkpoint(m, path.string());

    ModelConfig deeper = cfg;
    deeper.layers = 5;  // expects block4.* which the file lacks
    CHECK_THROWS_AS(load_checkpoint(path.string(), deeper), FormatError);

    ModelConfig shallower = cfg;
    shallower.layers = 3;  // file has unexpected block3.* tensors
    CHECK_THROWS_AS(load_checkpoint(path.string(), shallower), FormatError);

    ModelConfig wider = cfg;
    wider.d = 64;
    wider.d_k = 16;
    CHECK_THROWS_AS(load_checkpoint(path.string(), wider), FormatError);
}

TEST_CASE("adapters survive a save and load") {
    ModelConfig cfg;
    TinyLmm m = init_model(cfg, Rng(8));
    lora_attach(m, lora_default_targets(cfg), 4, 8.0f, Rng(9));
    Rng rng(10);
    for (const std::string& target : m.lora_targets) {
        DenseTensor& b = m.param("lora." + target + ".b");
        for (std::int64_t i = 0; i < b.size(); ++i)
            b[i] = rng.uniform(-0.1f, 0.1f);
    }

    fs::path path = work_dir() / "adapters.dlab";
    save_checkpoint(m, path.string());
    TinyLmm back = load_checkpoint(path.string(), cfg, 8.0f);
    std::vector<std::string> got = back.lora_targets;
    std::vector<std::string> want = m.lora_targets;
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK(got == want);
    CHECK(back.lora_rank == 4);
    CHECK(back.lora_alpha == 8.0f);
    CHECK(models_bitwise_equal(m, back));

    // Merging both copies keeps them identical.
    lora_merge(m);
    lora_merge(back);
    CHECK(models_bitwise_equal(m, back));
}

TEST_CASE("mixture tensors survive a save and load") {
    ModelConfig cfg;
    TinyLmm m = init_model(cfg, Rng(11));
    moe_wrap(m);
    fs::path path = work_dir() / "mixture.dlab";
    save_checkpoint(m, path.string());
    TinyLmm back = load_checkpoint(path.string(), cfg);
    CHECK(back.moe);
    CHECK(models_bitwise_equal(m, back));
    CHECK(back.params.size() == 40 + 16);
}

TEST_CASE("a partial adapter pair is rejected") {
    ModelConfig cfg;
    TinyLmm m = init_model(cfg, Rng(12));
    lora_attach(m, {"block0.wgate"}, 2, 8.0f, Rng(13));
    std::map<std::string, DenseTensor> tensors(m.params.begin(),
                                               m.params.end());
    tensors.erase("lora.block0.wgate.b");
    fs::path path = work_dir() / "partial.dlab";
    save_tensors(tensors, path.string());
    CHECK_THROWS_AS(load_checkpoint(path.string(), cfg), FormatError);
}
