#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace trajta::container {

// Single-file tensor container: an 8-byte little-endian header length, a
// JSON header (metadata plus tensor name/shape/dtype/offset entries), then
// raw little-endian float32 payloads in header order. Offsets are relative
// to the start of the payload section.
struct NamedTensor {
    std::string name;
    Eigen::MatrixXf value;
};

struct TensorFile {
    std::string meta_json;              // caller-defined metadata object (JSON text)
    std::vector<NamedTensor> tensors;   // in serialization order

    const Eigen::MatrixXf& at(const std::string& name) const;
    Eigen::MatrixXf& at(const std::string& name);
    bool has(const std::string& name) const;
};

void save(const std::string& path, const TensorFile& file);
TensorFile load(const std::string& path);

// Serialized bytes without touching the filesystem (used for hashing).
std::string to_bytes(const TensorFile& file);

}  // namespace trajta::container
