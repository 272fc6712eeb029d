#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "pollen/image.hpp"
#include "pollen/rng.hpp"

using namespace pollen;
namespace fs = std::filesystem;

namespace {

ImageU8 random_image(Rng& rng, int64_t w, int64_t h) {
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<size_t>(w * h * 3));
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
    return img;
}

}  // namespace

TEST_CASE("png and ppm round-trip the exact pixel bytes") {
    const auto dir = fs::temp_directory_path() / "pollen_test_img";
    fs::create_directories(dir);
    Rng rng(3);
    const auto img = random_image(rng, 37, 23);

    write_image((dir / "a.png").string(), img);
    const auto png = read_image((dir / "a.png").string());
    CHECK(png.width == img.width);
    CHECK(png.height == img.height);
    CHECK(png.pixels == img.pixels);

    write_image((dir / "a.ppm").string(), img);
    const auto ppm = read_image((dir / "a.ppm").string());
    CHECK(ppm.pixels == img.pixels);

    CHECK_THROWS_AS(read_image((dir / "missing.png").string()), IoError);
    CHECK_THROWS_AS(write_image((dir / "a.bmp").string(), img), IoError);
    fs::remove_all(dir);
}

TEST_CASE("png reader rejects non-png bytes") {
    const auto dir = fs::temp_directory_path() / "pollen_test_img2";
    fs::create_directories(dir);
    {
        FILE* f = fopen((dir / "junk.png").string().c_str(), "wb");
        fputs("definitely not a png", f);
        fclose(f);
    }
    CHECK_THROWS_AS(read_png((dir / "junk.png").string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("resize_area: constant image stays constant at any scale") {
    const auto img = make_image(100, 100, 50, 120, 200);
    const auto small = resize_area(img, 37, 41);
    CHECK(small.width == 37);
    CHECK(small.height == 41);
    for (size_t i = 0; i < small.pixels.size(); i += 3) {
        CHECK(small.pixels[i] == 50);
        CHECK(small.pixels[i + 1] == 120);
        CHECK(small.pixels[i + 2] == 200);
    }
}

TEST_CASE("resize_area: integer 2x downscale averages 2x2 blocks") {
    ImageU8 img = make_image(2, 2, 0, 0, 0);
    const uint8_t vals[4] = {10, 20, 30, 40};
    for (int i = 0; i < 4; ++i)
        img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = vals[i];
    const auto one = resize_area(img, 1, 1);
    CHECK(one.pixels[0] == 25);
}

TEST_CASE("image_to_tensor scales into [0,1]") {
    const auto img = make_image(4, 2, 0, 128, 255);
    const auto t = image_to_tensor(img);
    CHECK(t.shape() == std::vector<int64_t>{2, 4, 3});
    CHECK(t.data()[0] == doctest::Approx(0.f));
    CHECK(t.data()[1] == doctest::Approx(128.f / 255.f));
    CHECK(t.data()[2] == doctest::Approx(1.f));
}
