#pragma once

// Dataset handling: image/mask loading, resize + per-image z-score
// normalization, rotation augmentation, leakage-safe train/test split,
// and a synthetic blastocyst-phantom generator for dataset-free runs.

#include <cstdint>
#include <string>
#include <vector>

#include "blastoseg/image.hpp"
#include "blastoseg/tensor.hpp"

namespace blastoseg {

enum class Target { kIcm, kTe };

std::string target_name(Target t);
Target target_from_name(const std::string& name);

enum class Provenance { kOriginal, kRotated, kSynthetic };
enum class Split { kUnassigned, kTrain, kTest };

struct Sample {
    std::string id;
    Tensor<float> image;  // [C,H,W]
    Tensor<float> mask;   // [1,H,W], values exactly 0 or 1
    Provenance provenance = Provenance::kOriginal;
    int rotation_deg = 0;
    std::string origin_id;  // id of the unaugmented source sample
};

struct DataSet {
    std::vector<Sample> samples;
    std::vector<Split> split;  // aligned with samples
    std::uint64_t seed = 0;

    std::vector<const Sample*> members(Split s) const;
    std::vector<const Sample*> train() const { return members(Split::kTrain); }
    std::vector<const Sample*> test() const { return members(Split::kTest); }
};

// --------------------------- loading --------------------------------

// Layout: <dir>/images/<stem>.<ext> plus <dir>/masks_icm/<stem>.<ext>
// and <dir>/masks_te/<stem>.<ext>; 8-bit grayscale; mask foreground is
// any pixel > 127. Only the requested target's masks are loaded.
DataSet load_dataset(const std::string& dir, Target target);

Tensor<float> image_to_tensor(const GrayImage8& img);
Tensor<float> mask_to_tensor(const GrayImage8& img);  // binarizes at >127

// ------------------------- preprocessing ----------------------------

Tensor<float> resize_bilinear(const Tensor<float>& chw, int out_h, int out_w);
Tensor<float> resize_nearest(const Tensor<float>& chw, int out_h, int out_w);

// Bilinear-resizes the image and nearest-resizes the mask to size x
// size, then z-scores the image per channel (std floor 1e-8).
Sample preprocess(const Sample& sample, int size = 256);

void preprocess_all(DataSet& ds, int size = 256);

// --------------------------- augmentation ---------------------------

// Rotation about the image center; bilinear for images, nearest for
// masks, zero fill outside the source frame.
Tensor<float> rotate_bilinear(const Tensor<float>& chw, double degrees);
Tensor<float> rotate_nearest(const Tensor<float>& chw, double degrees);

// Rotations at 0, step, 2*step, ... < 360 degrees (so 360/step samples;
// the 0-degree copy is bitwise identical to the input).
std::vector<Sample> augment_rotations(const Sample& sample, int step_deg = 10);

// Appends rotated copies of every training sample to the set (skipping
// the redundant 0-degree duplicate), each inheriting the train split.
void augment_training_set(DataSet& ds, int step_deg = 10);

// ------------------------- split / shuffle --------------------------

// Deterministic permutation from the seed; floor(train_frac*N) samples
// train, the remainder test. Call before augmentation so that every
// rotation of an original inherits its split.
void split_and_shuffle(DataSet& ds, double train_frac, std::uint64_t seed);

// Training-order permutation for one epoch, re-seeded per epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

// --------------------------- phantoms -------------------------------

struct Phantom {
    std::string id;
    Tensor<float> image;     // [1,S,S], u8-quantized intensities 0..255
    Tensor<float> mask_icm;  // interior blob
    Tensor<float> mask_te;   // annulus; disjoint from mask_icm
};

std::vector<Phantom> generate_phantoms(int n, int size, std::uint64_t seed);

// Phantoms as a DataSet for the chosen target (masks picked, split
// unassigned, no preprocessing applied).
DataSet phantom_dataset(int n, int size, std::uint64_t seed, Target target);

// Writes n phantoms in the standard directory layout (images/,
// masks_icm/, masks_te/ as 8-bit PNGs).
void write_phantom_dataset(const std::string& dir, int n, int size, std::uint64_t seed);

// Writes a dataset back out in the standard layout (used by the augment
// command); images are clamped to 0..255 and masks written as {0,255}.
void write_dataset(const std::string& dir, const DataSet& ds, Target target);

} // namespace blastoseg
