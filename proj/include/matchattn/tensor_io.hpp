#pragma once

#include <string>
#include <vector>

#include "matchattn/tensor.hpp"

namespace matchattn {

// Binary tensor dump: magic "MTN1", u32 LE rank, rank x u32 LE extents, then
// row-major F32 LE payload. Doubles are narrowed on write and widened on read.
void write_mtn1(const std::string& path, const Tensor<float>& t);
Tensor<float> read_mtn1(const std::string& path);

// A bundle of named MTN1 tensors in one file: magic "MTNM", u32 LE count, then
// per entry u32 LE name length, name bytes, and a complete MTN1 record. Used
// for weight checkpoints; names double as the manifest.
struct NamedTensors {
    std::vector<std::pair<std::string, Tensor<float>>> items;
    const Tensor<float>* find(const std::string& name) const;
};

void write_mtn_bundle(const std::string& path, const NamedTensors& bundle);
NamedTensors read_mtn_bundle(const std::string& path);

}  // namespace matchattn
