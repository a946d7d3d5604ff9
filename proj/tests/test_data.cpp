#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "urwkv/data.hpp"

using namespace urwkv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("urwkv_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generator is deterministic per seed") {
    auto a = gen_synthetic<float>(7, 5, 32);
    auto b = gen_synthetic<float>(7, 5, 32);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].mask.data == b[i].mask.data);
        CHECK(a[i].id == b[i].id);
    }
    auto c = gen_synthetic<float>(8, 5, 32);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) any_diff = any_diff || a[i].image != c[i].image;
    CHECK(any_diff);
}

TEST_CASE("every generated mask is nonempty and strictly binary") {
    for (const auto& s : gen_synthetic<float>(3, 50, 32)) {
        std::int64_t fg = 0;
        for (auto v : s.mask.data) {
            CHECK(v <= 1);
            fg += v;
        }
        CHECK(fg > 0);
        for (auto v : s.image) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("mean foreground fraction stays in the generator's design band") {
    const auto samples = gen_synthetic<float>(99, 1000, 64);
    double total = 0.0;
    for (const auto& s : samples) {
        std::int64_t fg = 0;
        for (auto v : s.mask.data) fg += v;
        total += static_cast<double>(fg) / static_cast<double>(s.mask.data.size());
    }
    const double mean = total / static_cast<double>(samples.size());
    CHECK(mean >= 0.05);
    CHECK(mean <= 0.45);
}

TEST_CASE("dataset written to disk loads back identically") {
    TempDir tmp("roundtrip");
    auto samples = gen_synthetic<float>(21, 6, 16);
    write_dataset(tmp.path.string(), samples);
    auto loaded = load_dataset<float>(tmp.path.string());
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].id == samples[i].id);
        CHECK(loaded[i].image == samples[i].image);
        CHECK(loaded[i].mask.data == samples[i].mask.data);
    }
}

TEST_CASE("loader order is lexicographic by stem") {
    TempDir tmp("order");
    auto samples = gen_synthetic<float>(22, 3, 16);
    samples[0].id = "zebra";
    samples[1].id = "apple";
    samples[2].id = "mango";
    write_dataset(tmp.path.string(), samples);
    auto loaded = load_dataset<float>(tmp.path.string());
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0].id == "apple");
    CHECK(loaded[1].id == "mango");
    CHECK(loaded[2].id == "zebra");
}

TEST_CASE("mask binarization threshold 128 is inclusive") {
    TempDir tmp("threshold");
    fs::create_directories(tmp.path / "images");
    fs::create_directories(tmp.path / "masks");
    GrayImage img;
    img.h = img.w = 2;
    img.data = {0, 64, 128, 255};
    write_gray_png((tmp.path / "images" / "a.png").string(), img);
    GrayImage msk;
    msk.h = msk.w = 2;
    msk.data = {0, 127, 128, 255};
    write_gray_png((tmp.path / "masks" / "a.png").string(), msk);
    auto loaded = load_dataset<float>(tmp.path.string());
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].mask.data == std::vector<std::uint8_t>{0, 0, 1, 1});
    CHECK(loaded[0].image[3] == doctest::Approx(1.0));
}

TEST_CASE("loader errors name the offending file") {
    TempDir tmp("errors");
    auto samples = gen_synthetic<float>(23, 2, 16);
    write_dataset(tmp.path.string(), samples);
    fs::remove(tmp.path / "masks" / (samples[1].id + ".png"));
    CHECK_THROWS_WITH_AS(load_dataset<float>(tmp.path.string()), doctest::Contains(samples[1].id.c_str()),
                         std::runtime_error);

    TempDir tmp2("mismatch");
    fs::create_directories(tmp2.path / "images");
    fs::create_directories(tmp2.path / "masks");
    GrayImage a;
    a.h = a.w = 4;
    a.data.assign(16, 10);
    write_gray_png((tmp2.path / "images" / "x.png").string(), a);
    GrayImage b;
    b.h = b.w = 2;
    b.data.assign(4, 200);
    write_gray_png((tmp2.path / "masks" / "x.png").string(), b);
    CHECK_THROWS_WITH_AS(load_dataset<float>(tmp2.path.string()), doctest::Contains("size mismatch"),
                         std::runtime_error);
}
