#include "blastoseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "blastoseg/errors.hpp"

namespace fs = std::filesystem;

namespace blastoseg {

namespace {

constexpr const char* kImagesSubdir = "images";

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Fisher-Yates with a fixed draw sequence, independent of any stdlib
// shuffle implementation.
void deterministic_shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

std::string stem_of(const fs::path& p) { return p.stem().string(); }

} // namespace

std::string target_name(Target t) { return t == Target::kIcm ? "icm" : "te"; }

Target target_from_name(const std::string& name) {
    if (name == "icm") return Target::kIcm;
    if (name == "te") return Target::kTe;
    throw ParameterError("unknown target '" + name + "' (expected icm or te)");
}

std::vector<const Sample*> DataSet::members(Split s) const {
    std::vector<const Sample*> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (split[i] == s) out.push_back(&samples[i]);
    return out;
}

// --------------------------- loading --------------------------------

Tensor<float> image_to_tensor(const GrayImage8& img) {
    Tensor<float> t({1, img.height, img.width});
    for (index_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(img.pixels[static_cast<std::size_t>(i)]);
    return t;
}

Tensor<float> mask_to_tensor(const GrayImage8& img) {
    Tensor<float> t({1, img.height, img.width});
    for (index_t i = 0; i < t.numel(); ++i)
        t[i] = img.pixels[static_cast<std::size_t>(i)] > 127 ? 1.0f : 0.0f;
    return t;
}

DataSet load_dataset(const std::string& dir, Target target) {
    const fs::path root(dir);
    const fs::path images_dir = root / kImagesSubdir;
    const fs::path masks_dir = root / ("masks_" + target_name(target));
    if (!fs::is_directory(images_dir))
        throw DataError("missing images directory: " + images_dir.string());
    if (!fs::is_directory(masks_dir))
        throw DataError("missing masks directory: " + masks_dir.string());

    std::vector<fs::path> image_files;
    for (const auto& entry : fs::directory_iterator(images_dir)) {
        if (entry.is_regular_file() && has_supported_image_extension(entry.path().filename().string()))
            image_files.push_back(entry.path());
    }
    std::sort(image_files.begin(), image_files.end());
    if (image_files.empty()) throw DataError("empty dataset: no images in " + images_dir.string());

    // index masks by stem
    std::map<std::string, fs::path> masks;
    for (const auto& entry : fs::directory_iterator(masks_dir)) {
        if (entry.is_regular_file() && has_supported_image_extension(entry.path().filename().string()))
            masks.emplace(stem_of(entry.path()), entry.path());
    }

    std::vector<std::string> unpaired;
    DataSet ds;
    for (const auto& img_path : image_files) {
        const std::string stem = stem_of(img_path);
        auto it = masks.find(stem);
        if (it == masks.end()) {
            unpaired.push_back(stem);
            continue;
        }
        if (!unpaired.empty()) continue;  // already failing; just collect stems
        GrayImage8 img = read_gray8(img_path.string());
        GrayImage8 msk = read_gray8(it->second.string());
        if (img.width != msk.width || img.height != msk.height)
            throw DataError("image/mask size mismatch for '" + stem + "'");
        Sample s;
        s.id = stem;
        s.origin_id = stem;
        s.image = image_to_tensor(img);
        s.mask = mask_to_tensor(msk);
        ds.samples.push_back(std::move(s));
    }
    if (!unpaired.empty()) {
        std::string list;
        for (const auto& s : unpaired) list += (list.empty() ? "" : ", ") + s;
        throw DataError("images without " + target_name(target) + " masks: " + list);
    }
    ds.split.assign(ds.samples.size(), Split::kUnassigned);
    return ds;
}

// ------------------------- preprocessing ----------------------------

Tensor<float> resize_bilinear(const Tensor<float>& chw, int out_h, int out_w) {
    const index_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (out_h == h && out_w == w) return chw.clone();
    Tensor<float> out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (index_t ch = 0; ch < c; ++ch) {
        const float* src = chw.data() + ch * h * w;
        float* dst = out.data() + ch * static_cast<index_t>(out_h) * out_w;
        for (index_t y = 0; y < out_h; ++y) {
            const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            const index_t y0 = static_cast<index_t>(std::floor(fy));
            const double wy = fy - static_cast<double>(y0);
            const index_t ya = std::clamp<index_t>(y0, 0, h - 1);
            const index_t yb = std::clamp<index_t>(y0 + 1, 0, h - 1);
            for (index_t x = 0; x < out_w; ++x) {
                const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                const index_t x0 = static_cast<index_t>(std::floor(fx));
                const double wx = fx - static_cast<double>(x0);
                const index_t xa = std::clamp<index_t>(x0, 0, w - 1);
                const index_t xb = std::clamp<index_t>(x0 + 1, 0, w - 1);
                const double v = (1.0 - wy) * ((1.0 - wx) * src[ya * w + xa] + wx * src[ya * w + xb]) +
                                 wy * ((1.0 - wx) * src[yb * w + xa] + wx * src[yb * w + xb]);
                dst[y * out_w + x] = static_cast<float>(v);
            }
        }
    }
    return out;
}

Tensor<float> resize_nearest(const Tensor<float>& chw, int out_h, int out_w) {
    const index_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (out_h == h && out_w == w) return chw.clone();
    Tensor<float> out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (index_t ch = 0; ch < c; ++ch) {
        const float* src = chw.data() + ch * h * w;
        float* dst = out.data() + ch * static_cast<index_t>(out_h) * out_w;
        for (index_t y = 0; y < out_h; ++y) {
            const index_t ys = std::clamp<index_t>(
                static_cast<index_t>(std::floor((static_cast<double>(y) + 0.5) * sy)), 0, h - 1);
            for (index_t x = 0; x < out_w; ++x) {
                const index_t xs = std::clamp<index_t>(
                    static_cast<index_t>(std::floor((static_cast<double>(x) + 0.5) * sx)), 0, w - 1);
                dst[y * out_w + x] = src[ys * w + xs];
            }
        }
    }
    return out;
}

Sample preprocess(const Sample& sample, int size) {
    if (sample.image.numel() == 0) throw ParameterError("preprocess: empty image");
    Sample out = sample;
    out.image = resize_bilinear(sample.image, size, size);
    out.mask = resize_nearest(sample.mask, size, size);

    const index_t c = out.image.dim(0);
    const index_t plane = static_cast<index_t>(size) * size;
    for (index_t ch = 0; ch < c; ++ch) {
        float* p = out.image.data() + ch * plane;
        double sum = 0.0;
        for (index_t i = 0; i < plane; ++i) sum += p[i];
        const double mean = sum / static_cast<double>(plane);
        double var = 0.0;
        for (index_t i = 0; i < plane; ++i) {
            const double d = p[i] - mean;
            var += d * d;
        }
        double std_dev = std::sqrt(var / static_cast<double>(plane));
        if (std_dev < 1e-8) {
            std::fprintf(stderr, "warning: zero-variance image '%s', using std floor 1e-8\n",
                         sample.id.c_str());
            std_dev = 1e-8;
        }
        for (index_t i = 0; i < plane; ++i)
            p[i] = static_cast<float>((p[i] - mean) / std_dev);
    }
    return out;
}

void preprocess_all(DataSet& ds, int size) {
    for (auto& s : ds.samples) s = preprocess(s, size);
}

// --------------------------- augmentation ---------------------------

namespace {

// Inverse-mapped rotation about the image center. For every output
// pixel the source position is computed with the transposed rotation;
// zero degrees reproduces the input bitwise.
template <bool kBilinear>
Tensor<float> rotate_impl(const Tensor<float>& chw, double degrees) {
    const index_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    const double rad = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = static_cast<double>(h - 1) / 2.0;
    const double cx = static_cast<double>(w - 1) / 2.0;
    Tensor<float> out({c, h, w});
    for (index_t ch = 0; ch < c; ++ch) {
        const float* src = chw.data() + ch * h * w;
        float* dst = out.data() + ch * h * w;
        for (index_t y = 0; y < h; ++y) {
            const double dy = static_cast<double>(y) - cy;
            for (index_t x = 0; x < w; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double sx = cs * dx + sn * dy + cx;
                const double sy = -sn * dx + cs * dy + cy;
                double v = 0.0;
                if constexpr (kBilinear) {
                    const double fx0 = std::floor(sx), fy0 = std::floor(sy);
                    const index_t x0 = static_cast<index_t>(fx0), y0 = static_cast<index_t>(fy0);
                    const double wx = sx - fx0, wy = sy - fy0;
                    auto pick = [&](index_t yy, index_t xx) -> double {
                        return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? src[yy * w + xx] : 0.0;
                    };
                    v = (1.0 - wy) * ((1.0 - wx) * pick(y0, x0) + wx * pick(y0, x0 + 1)) +
                        wy * ((1.0 - wx) * pick(y0 + 1, x0) + wx * pick(y0 + 1, x0 + 1));
                } else {
                    const index_t xn = static_cast<index_t>(std::lround(sx));
                    const index_t yn = static_cast<index_t>(std::lround(sy));
                    if (yn >= 0 && yn < h && xn >= 0 && xn < w) v = src[yn * w + xn];
                }
                dst[y * w + x] = static_cast<float>(v);
            }
        }
    }
    return out;
}

} // namespace

Tensor<float> rotate_bilinear(const Tensor<float>& chw, double degrees) {
    return rotate_impl<true>(chw, degrees);
}

Tensor<float> rotate_nearest(const Tensor<float>& chw, double degrees) {
    return rotate_impl<false>(chw, degrees);
}

std::vector<Sample> augment_rotations(const Sample& sample, int step_deg) {
    if (sample.image.dim(1) != sample.image.dim(2))
        throw ParameterError("augment_rotations: sample '" + sample.id + "' is not square");
    if (step_deg <= 0 || 360 % step_deg != 0)
        throw ParameterError("augment_rotations: step " + std::to_string(step_deg) +
                             " does not divide 360");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(360 / step_deg));
    for (int deg = 0; deg < 360; deg += step_deg) {
        Sample r;
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "_rot%03d", deg);
        r.id = sample.id + suffix;
        r.origin_id = sample.origin_id.empty() ? sample.id : sample.origin_id;
        r.provenance = Provenance::kRotated;
        r.rotation_deg = deg;
        if (deg == 0) {
            r.image = sample.image.clone();
            r.mask = sample.mask.clone();
        } else {
            r.image = rotate_bilinear(sample.image, deg);
            r.mask = rotate_nearest(sample.mask, deg);
        }
        out.push_back(std::move(r));
    }
    return out;
}

void augment_training_set(DataSet& ds, int step_deg) {
    const std::size_t n = ds.samples.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (ds.split[i] != Split::kTrain) continue;
        auto rotations = augment_rotations(ds.samples[i], step_deg);
        for (auto& r : rotations) {
            if (r.rotation_deg == 0) continue;  // the original already stands in for 0 degrees
            ds.samples.push_back(std::move(r));
            ds.split.push_back(Split::kTrain);
        }
    }
}

// ------------------------- split / shuffle --------------------------

void split_and_shuffle(DataSet& ds, double train_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw ParameterError("train_frac must be in (0,1), got " + std::to_string(train_frac));
    if (ds.samples.size() < 2)
        throw ParameterError("split needs at least 2 samples, have " +
                             std::to_string(ds.samples.size()));
    for (const auto& s : ds.samples)
        if (s.provenance == Provenance::kRotated)
            throw ParameterError("split must be assigned before augmentation");

    std::vector<std::size_t> order(ds.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(splitmix64(seed));
    deterministic_shuffle(order, rng);

    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(order.size())));
    ds.split.assign(ds.samples.size(), Split::kTest);
    for (std::size_t i = 0; i < n_train; ++i) ds.split[order[i]] = Split::kTrain;
    ds.seed = seed;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 1)));
    deterministic_shuffle(order, rng);
    return order;
}

// --------------------------- phantoms -------------------------------

namespace {

// Smooth low-frequency noise: an 8x8-ish lattice of uniform values,
// bilinearly upsampled.
struct ValueNoise {
    int nodes;
    int size;
    std::vector<double> grid;

    ValueNoise(int image_size, Rng& rng) : nodes(9), size(image_size), grid(static_cast<std::size_t>(nodes) * nodes) {
        std::uniform_real_distribution<double> uni(-1.0, 1.0);
        for (auto& g : grid) g = uni(rng);
    }

    double at(double y, double x) const {
        const double gy = y / (size - 1.0) * (nodes - 1);
        const double gx = x / (size - 1.0) * (nodes - 1);
        const int y0 = std::min(static_cast<int>(gy), nodes - 2);
        const int x0 = std::min(static_cast<int>(gx), nodes - 2);
        // smoothstep weights keep the field C1, so resampling it stays
        // faithful under rotation
        const double ty = gy - y0, tx = gx - x0;
        const double fy = ty * ty * (3.0 - 2.0 * ty);
        const double fx = tx * tx * (3.0 - 2.0 * tx);
        const double a = grid[static_cast<std::size_t>(y0) * nodes + x0];
        const double b = grid[static_cast<std::size_t>(y0) * nodes + x0 + 1];
        const double c = grid[static_cast<std::size_t>(y0 + 1) * nodes + x0];
        const double d = grid[static_cast<std::size_t>(y0 + 1) * nodes + x0 + 1];
        return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
    }
};

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// 0 outside the ellipse, 1 inside, smoothed over ~4 px at the boundary;
// wide enough that rotation resampling stays faithful. rho is the
// normalized elliptical radius, scale the mean semi-axis.
double soft_inside(double rho, double scale_px) {
    const double dist_px = (1.0 - rho) * scale_px;
    return smoothstep(dist_px / 5.0 + 0.5);
}

struct Ellipse {
    double cx, cy, a, b, phi;

    double rho(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double cs = std::cos(phi), sn = std::sin(phi);
        const double u = (cs * dx + sn * dy) / a;
        const double v = (-sn * dx + cs * dy) / b;
        return std::sqrt(u * u + v * v);
    }
};

} // namespace

std::vector<Phantom> generate_phantoms(int n, int size, std::uint64_t seed) {
    if (n < 1) throw ParameterError("generate_phantoms: n must be >= 1");
    if (size < 16 || size % 16 != 0)
        throw ParameterError("generate_phantoms: size must be a positive multiple of 16");

    Rng rng(splitmix64(seed ^ 0x7068616e746f6dULL));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double s = static_cast<double>(size);

    std::vector<Phantom> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double cx = s * (0.5 + 0.05 * (uni(rng) - 0.5));
        const double cy = s * (0.5 + 0.05 * (uni(rng) - 0.5));
        const double a_out = s * (0.36 + 0.06 * uni(rng));
        const double b_out = a_out * (0.90 + 0.14 * uni(rng));
        const double thickness = s * (0.09 + 0.03 * uni(rng));
        const double phi = uni(rng) * 2.0 * std::numbers::pi;
        const Ellipse outer{cx, cy, a_out, b_out, phi};
        const Ellipse inner{cx, cy, a_out - thickness, b_out - thickness, phi};

        const double icm_a = s * (0.13 + 0.05 * uni(rng));
        const double icm_b = icm_a * (0.85 + 0.20 * uni(rng));
        const double icm_phi = uni(rng) * 2.0 * std::numbers::pi;
        const double icm_rmax = std::max(icm_a, icm_b);
        const double budget = std::max(0.0, 0.92 * std::min(inner.a, inner.b) - icm_rmax);
        const double off_r = uni(rng) * budget;
        const double off_t = uni(rng) * 2.0 * std::numbers::pi;
        const Ellipse icm{cx + off_r * std::cos(off_t), cy + off_r * std::sin(off_t), icm_a, icm_b,
                          icm_phi};

        const ValueNoise noise(size, rng);
        const double tex_freq = 6.0 + std::floor(uni(rng) * 5.0);
        const double tex_phase = uni(rng) * 2.0 * std::numbers::pi;

        Phantom ph;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "phantom_%03d", i);
        ph.id = idbuf;
        ph.image = Tensor<float>({1, size, size});
        ph.mask_icm = Tensor<float>({1, size, size});
        ph.mask_te = Tensor<float>({1, size, size});

        const double ring_scale = 0.5 * (a_out + b_out);
        const double inner_scale = 0.5 * (inner.a + inner.b);
        const double icm_scale = 0.5 * (icm_a + icm_b);

        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double xd = x, yd = y;
                const double rho_out = outer.rho(xd, yd);
                const double rho_in = inner.rho(xd, yd);
                const double rho_icm = icm.rho(xd, yd);
                const double nv = noise.at(yd, xd);

                double v = 40.0 + 8.0 * nv;  // zona-side background
                const double w_interior = soft_inside(rho_in, inner_scale);
                v = v * (1.0 - w_interior) + (58.0 + 9.0 * nv) * w_interior;

                const double ang = std::atan2(yd - cy, xd - cx);
                const double ring_tex = std::sin(tex_freq * ang + tex_phase);
                const double w_ring = soft_inside(rho_out, ring_scale) * (1.0 - w_interior);
                v = v * (1.0 - w_ring) + (122.0 + 14.0 * ring_tex + 6.0 * nv) * w_ring;

                const double w_icm = soft_inside(rho_icm, icm_scale) * w_interior;
                v = v * (1.0 - w_icm) + (200.0 + 9.0 * nv) * w_icm;

                const double u8 = std::clamp(std::round(v), 0.0, 255.0);
                const index_t idx = static_cast<index_t>(y) * size + x;
                ph.image[idx] = static_cast<float>(u8);
                ph.mask_te[idx] = (rho_out <= 1.0 && rho_in > 1.0) ? 1.0f : 0.0f;
                ph.mask_icm[idx] = (rho_icm <= 1.0 && rho_in < 1.0) ? 1.0f : 0.0f;
            }
        }
        out.push_back(std::move(ph));
    }
    return out;
}

DataSet phantom_dataset(int n, int size, std::uint64_t seed, Target target) {
    DataSet ds;
    for (auto& ph : generate_phantoms(n, size, seed)) {
        Sample s;
        s.id = ph.id;
        s.origin_id = ph.id;
        s.provenance = Provenance::kSynthetic;
        s.image = std::move(ph.image);
        s.mask = target == Target::kIcm ? std::move(ph.mask_icm) : std::move(ph.mask_te);
        ds.samples.push_back(std::move(s));
    }
    ds.split.assign(ds.samples.size(), Split::kUnassigned);
    ds.seed = seed;
    return ds;
}

namespace {

GrayImage8 tensor_to_gray8(const Tensor<float>& chw, bool as_mask) {
    GrayImage8 img;
    img.height = static_cast<int>(chw.dim(1));
    img.width = static_cast<int>(chw.dim(2));
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (index_t i = 0; i < chw.numel(); ++i) {
        const float v = chw[i];
        img.pixels[static_cast<std::size_t>(i)] =
            as_mask ? (v >= 0.5f ? 255 : 0)
                    : static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    return img;
}

} // namespace

void write_phantom_dataset(const std::string& dir, int n, int size, std::uint64_t seed) {
    const fs::path root(dir);
    fs::create_directories(root / kImagesSubdir);
    fs::create_directories(root / "masks_icm");
    fs::create_directories(root / "masks_te");
    for (const auto& ph : generate_phantoms(n, size, seed)) {
        write_png_gray8((root / kImagesSubdir / (ph.id + ".png")).string(),
                        tensor_to_gray8(ph.image, false));
        write_png_gray8((root / "masks_icm" / (ph.id + ".png")).string(),
                        tensor_to_gray8(ph.mask_icm, true));
        write_png_gray8((root / "masks_te" / (ph.id + ".png")).string(),
                        tensor_to_gray8(ph.mask_te, true));
    }
}

void write_dataset(const std::string& dir, const DataSet& ds, Target target) {
    const fs::path root(dir);
    fs::create_directories(root / kImagesSubdir);
    const fs::path masks_dir = root / ("masks_" + target_name(target));
    fs::create_directories(masks_dir);
    for (const auto& s : ds.samples) {
        write_png_gray8((root / kImagesSubdir / (s.id + ".png")).string(),
                        tensor_to_gray8(s.image, false));
        write_png_gray8((masks_dir / (s.id + ".png")).string(), tensor_to_gray8(s.mask, true));
    }
}

} // namespace blastoseg
