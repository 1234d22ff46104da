#include "doctest.h"

#include <cmath>
#include <set>

#include "blastoseg/data.hpp"
#include "blastoseg/errors.hpp"
#include "test_util.hpp"

using namespace blastoseg;
using testutil::TempDir;

namespace {

Sample make_sample(const Tensor<float>& image, const Tensor<float>& mask, std::string id = "s") {
    Sample s;
    s.id = std::move(id);
    s.origin_id = s.id;
    s.image = image;
    s.mask = mask;
    return s;
}

double mask_area(const Tensor<float>& m) {
    double a = 0.0;
    for (index_t i = 0; i < m.numel(); ++i) a += m[i];
    return a;
}

} // namespace

TEST_CASE("mask binarization thresholds at >127 and preserves area") {
    GrayImage8 img;
    img.width = 4;
    img.height = 1;
    img.pixels = {0, 127, 128, 255};
    auto t = mask_to_tensor(img);
    CHECK(t[0] == 0.0f);
    CHECK(t[1] == 0.0f);
    CHECK(t[2] == 1.0f);
    CHECK(t[3] == 1.0f);

    GrayImage8 hard;
    hard.width = 10;
    hard.height = 10;
    hard.pixels.assign(100, 0);
    for (int i = 0; i < 37; ++i) hard.pixels[static_cast<std::size_t>(i * 2)] = 255;
    auto m = mask_to_tensor(hard);
    CHECK(mask_area(m) == 37.0);
}

TEST_CASE("preprocess z-scores the image and keeps the mask binary") {
    Rng rng(5);
    std::uniform_real_distribution<float> uni(0.0f, 255.0f);
    Tensor<float> img({1, 64, 64});
    for (index_t i = 0; i < img.numel(); ++i) img[i] = uni(rng);
    Tensor<float> mask({1, 64, 64}, 0.0f);
    for (index_t i = 0; i < 500; ++i) mask[i] = 1.0f;

    Sample out = preprocess(make_sample(img, mask), 64);
    double s = 0.0, s2 = 0.0;
    for (index_t i = 0; i < out.image.numel(); ++i) {
        s += out.image[i];
        s2 += out.image[i] * out.image[i];
    }
    const double mean = s / out.image.numel();
    const double var = s2 / out.image.numel() - mean * mean;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-4);
    for (index_t i = 0; i < out.mask.numel(); ++i)
        CHECK((out.mask[i] == 0.0f || out.mask[i] == 1.0f));
}

TEST_CASE("resize to the same grid is the identity") {
    Rng rng(6);
    std::uniform_real_distribution<float> uni(0.0f, 1.0f);
    Tensor<float> img({1, 32, 32});
    for (index_t i = 0; i < img.numel(); ++i) img[i] = uni(rng);
    auto same = resize_bilinear(img, 32, 32);
    for (index_t i = 0; i < img.numel(); ++i) CHECK(same[i] == img[i]);
    auto samen = resize_nearest(img, 32, 32);
    for (index_t i = 0; i < img.numel(); ++i) CHECK(samen[i] == img[i]);
}

TEST_CASE("nearest-neighbor downsize of a checkerboard mask stays binary") {
    Tensor<float> board({1, 512, 512});
    for (index_t y = 0; y < 512; ++y)
        for (index_t x = 0; x < 512; ++x) board[y * 512 + x] = static_cast<float>((y / 2 + x / 2) % 2);
    auto small = resize_nearest(board, 256, 256);
    REQUIRE(small.shape() == Shape{1, 256, 256});
    for (index_t i = 0; i < small.numel(); ++i)
        CHECK((small[i] == 0.0f || small[i] == 1.0f));
}

TEST_CASE("zero-variance images fall back to the std floor") {
    Tensor<float> flat({1, 16, 16}, 42.0f);
    Tensor<float> mask({1, 16, 16}, 0.0f);
    Sample out = preprocess(make_sample(flat, mask), 16);
    CHECK(out.image.all_finite());
    for (index_t i = 0; i < out.image.numel(); ++i) CHECK(out.image[i] == 0.0f);
}

TEST_CASE("augment_rotations yields 36 samples, 0 degrees bitwise identical") {
    auto phantoms = generate_phantoms(1, 64, 7);
    Sample s = make_sample(phantoms[0].image, phantoms[0].mask_icm, "p0");
    auto rots = augment_rotations(s, 10);
    REQUIRE(rots.size() == 36);
    for (index_t i = 0; i < s.image.numel(); ++i) CHECK(rots[0].image[i] == s.image[i]);
    for (index_t i = 0; i < s.mask.numel(); ++i) CHECK(rots[0].mask[i] == s.mask[i]);
    CHECK(rots[7].rotation_deg == 70);
    CHECK(rots[7].provenance == Provenance::kRotated);
    CHECK(rots[7].origin_id == "p0");
    for (const auto& r : rots)
        for (index_t i = 0; i < r.mask.numel(); ++i)
            CHECK((r.mask[i] == 0.0f || r.mask[i] == 1.0f));
}

TEST_CASE("rotation by 90 degrees is an exact array rotation for masks") {
    const index_t n = 32;
    Rng rng(8);
    Tensor<float> mask({1, n, n}, 0.0f);
    for (index_t i = 0; i < mask.numel(); ++i) mask[i] = (rng() % 4 == 0) ? 1.0f : 0.0f;
    auto rot = rotate_nearest(mask, 90.0);
    // the inverse map sends (y,x) -> (n-1-x, y)
    for (index_t y = 0; y < n; ++y)
        for (index_t x = 0; x < n; ++x)
            CHECK(rot[y * n + x] == mask[(n - 1 - x) * n + y]);
}

TEST_CASE("rotation keeps the mask area within 3 percent") {
    auto phantoms = generate_phantoms(2, 96, 17);
    for (const auto& ph : phantoms) {
        const double area = mask_area(ph.mask_te);
        for (double deg : {30.0, 70.0, 135.0, 220.0}) {
            const double rot_area = mask_area(rotate_nearest(ph.mask_te, deg));
            CHECK(std::fabs(rot_area - area) / area < 0.03);
        }
    }
}

TEST_CASE("rotate then un-rotate recovers the interior to MAE 0.02") {
    auto phantoms = generate_phantoms(2, 96, 23);
    for (const auto& ph : phantoms) {
        Sample s = make_sample(ph.image, ph.mask_icm);
        Sample norm = preprocess(s, 96);
        for (double deg : {35.0, 100.0}) {
            auto there = rotate_bilinear(norm.image, deg);
            auto back = rotate_bilinear(there, -deg);
            double err = 0.0;
            index_t count = 0;
            const double c = (96 - 1) / 2.0;
            for (index_t y = 0; y < 96; ++y)
                for (index_t x = 0; x < 96; ++x) {
                    const double r = std::hypot(y - c, x - c);
                    if (r > 0.45 * 96) continue;  // border fill excluded
                    err += std::fabs(back[y * 96 + x] - norm.image[y * 96 + x]);
                    ++count;
                }
            CHECK(err / count <= 0.02);
        }
    }
}

TEST_CASE("augmentation rejects bad input") {
    Tensor<float> rect_img({1, 16, 32}, 0.0f);
    Tensor<float> rect_mask({1, 16, 32}, 0.0f);
    CHECK_THROWS_AS(augment_rotations(make_sample(rect_img, rect_mask), 10), ParameterError);

    auto phantoms = generate_phantoms(1, 32, 1);
    Sample sq = make_sample(phantoms[0].image, phantoms[0].mask_te);
    CHECK_THROWS_AS(augment_rotations(sq, 7), ParameterError);
    CHECK_THROWS_AS(augment_rotations(sq, 0), ParameterError);
    CHECK_NOTHROW(augment_rotations(sq, 120));
}

TEST_CASE("split is a seeded partition on originals") {
    DataSet ds = phantom_dataset(20, 32, 3, Target::kIcm);
    split_and_shuffle(ds, 0.85, 99);
    CHECK(ds.train().size() == 17);  // floor(0.85*20)
    CHECK(ds.test().size() == 3);
    for (auto s : ds.split) CHECK(s != Split::kUnassigned);

    DataSet ds2 = phantom_dataset(20, 32, 3, Target::kIcm);
    split_and_shuffle(ds2, 0.85, 99);
    for (std::size_t i = 0; i < ds.split.size(); ++i) CHECK(ds.split[i] == ds2.split[i]);

    DataSet ds3 = phantom_dataset(20, 32, 3, Target::kIcm);
    split_and_shuffle(ds3, 0.85, 100);
    bool differs = false;
    for (std::size_t i = 0; i < ds.split.size(); ++i) differs |= (ds.split[i] != ds3.split[i]);
    CHECK(differs);

    CHECK_THROWS_AS(split_and_shuffle(ds, 0.0, 1), ParameterError);
    CHECK_THROWS_AS(split_and_shuffle(ds, 1.0, 1), ParameterError);
}

TEST_CASE("a 249-image set splits 211/38") {
    // same arithmetic as the blastocyst dataset: floor(0.85*249) = 211
    DataSet ds;
    for (int i = 0; i < 249; ++i) {
        Sample s = make_sample(Tensor<float>({1, 16, 16}, 0.0f), Tensor<float>({1, 16, 16}, 0.0f),
                               "img" + std::to_string(i));
        ds.samples.push_back(std::move(s));
    }
    ds.split.assign(ds.samples.size(), Split::kUnassigned);
    split_and_shuffle(ds, 0.85, 1);
    CHECK(ds.train().size() == 211);
    CHECK(ds.test().size() == 38);
}

TEST_CASE("rotations inherit the split of their original") {
    DataSet ds = phantom_dataset(6, 32, 11, Target::kTe);
    split_and_shuffle(ds, 0.5, 4);
    const std::size_t train_before = ds.train().size();
    augment_training_set(ds, 90);  // 4 rotations per original, 3 appended
    CHECK(ds.train().size() == train_before * 4);
    std::set<std::string> train_origins;
    for (auto* s : ds.train()) train_origins.insert(s->origin_id);
    for (auto* s : ds.test()) CHECK(train_origins.count(s->origin_id) == 0);

    // splitting after augmentation is refused
    CHECK_THROWS_AS(split_and_shuffle(ds, 0.5, 4), ParameterError);
}

TEST_CASE("epoch_order is a deterministic permutation re-seeded per epoch") {
    auto a = epoch_order(100, 7, 3);
    auto b = epoch_order(100, 7, 3);
    CHECK(a == b);
    auto c = epoch_order(100, 7, 4);
    CHECK(a != c);
    std::set<std::size_t> seen(a.begin(), a.end());
    CHECK(seen.size() == 100);
}

TEST_CASE("phantoms are deterministic and satisfy the mask geometry") {
    auto a = generate_phantoms(3, 64, 42);
    auto b = generate_phantoms(3, 64, 42);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        for (index_t j = 0; j < a[i].image.numel(); ++j) CHECK(a[i].image[j] == b[i].image[j]);
        for (index_t j = 0; j < a[i].mask_te.numel(); ++j) CHECK(a[i].mask_te[j] == b[i].mask_te[j]);
    }

    for (const auto& ph : a) {
        const index_t n = 64;
        double te = 0.0;
        for (index_t i = 0; i < n * n; ++i) {
            CHECK(ph.mask_icm[i] * ph.mask_te[i] == 0.0f);  // disjoint
            te += ph.mask_te[i];
        }
        const double te_frac = te / static_cast<double>(n * n);
        CHECK(te_frac >= 0.10);
        CHECK(te_frac <= 0.30);
        CHECK(mask_area(ph.mask_icm) > 0.0);

        // every ICM pixel is enclosed by the ring along all four axes
        for (index_t y = 0; y < n; ++y)
            for (index_t x = 0; x < n; ++x) {
                if (ph.mask_icm[y * n + x] != 1.0f) continue;
                bool left = false, right = false, up = false, down = false;
                for (index_t k = 0; k < x; ++k) left |= ph.mask_te[y * n + k] == 1.0f;
                for (index_t k = x + 1; k < n; ++k) right |= ph.mask_te[y * n + k] == 1.0f;
                for (index_t k = 0; k < y; ++k) up |= ph.mask_te[k * n + x] == 1.0f;
                for (index_t k = y + 1; k < n; ++k) down |= ph.mask_te[k * n + x] == 1.0f;
                REQUIRE((left && right && up && down));
            }
    }

    CHECK_THROWS_AS(generate_phantoms(0, 64, 1), ParameterError);
    CHECK_THROWS_AS(generate_phantoms(1, 60, 1), ParameterError);
}

TEST_CASE("dataset round trip through the standard directory layout") {
    TempDir dir;
    write_phantom_dataset(dir.path.string(), 3, 32, 5);
    DataSet icm = load_dataset(dir.path.string(), Target::kIcm);
    DataSet te = load_dataset(dir.path.string(), Target::kTe);
    REQUIRE(icm.samples.size() == 3);
    REQUIRE(te.samples.size() == 3);

    auto mem = generate_phantoms(3, 32, 5);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(icm.samples[i].id == mem[i].id);
        for (index_t j = 0; j < mem[i].image.numel(); ++j) {
            CHECK(icm.samples[i].image[j] == mem[i].image[j]);  // u8-quantized at source
            CHECK(icm.samples[i].mask[j] == mem[i].mask_icm[j]);
            CHECK(te.samples[i].mask[j] == mem[i].mask_te[j]);
        }
    }
}

TEST_CASE("loader errors") {
    TempDir dir;
    CHECK_THROWS_AS(load_dataset(dir.path.string(), Target::kIcm), DataError);

    namespace fs = std::filesystem;
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks_icm");
    CHECK_THROWS_AS(load_dataset(dir.path.string(), Target::kIcm), DataError);  // empty

    // one image without a mask
    GrayImage8 img;
    img.width = img.height = 8;
    img.pixels.assign(64, 100);
    write_png_gray8((dir.path / "images" / "orphan.png").string(), img);
    try {
        load_dataset(dir.path.string(), Target::kIcm);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("orphan") != std::string::npos);
    }

    // mismatched mask size
    write_png_gray8((dir.path / "masks_icm" / "orphan.png").string(), img);
    GrayImage8 small;
    small.width = small.height = 4;
    small.pixels.assign(16, 255);
    write_png_gray8((dir.path / "images" / "tiny.png").string(), img);
    write_png_gray8((dir.path / "masks_icm" / "tiny.png").string(), small);
    CHECK_THROWS_AS(load_dataset(dir.path.string(), Target::kIcm), DataError);
}

TEST_CASE("target names") {
    CHECK(target_name(Target::kIcm) == "icm");
    CHECK(target_name(Target::kTe) == "te");
    CHECK(target_from_name("te") == Target::kTe);
    CHECK_THROWS_AS(target_from_name("zp"), ParameterError);
}
