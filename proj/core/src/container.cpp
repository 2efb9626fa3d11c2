#include "trajta/container.hpp"

#include <cstring>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"

namespace trajta::container {

namespace {

static_assert(sizeof(float) == 4);

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const std::string& bytes, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return v;
}

}  // namespace

const Eigen::MatrixXf& TensorFile::at(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("tensor not found: " + name);
}

Eigen::MatrixXf& TensorFile::at(const std::string& name) {
    for (auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("tensor not found: " + name);
}

bool TensorFile::has(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

std::string to_bytes(const TensorFile& file) {
    nlohmann::json header;
    header["format"] = "trajta-tensors-v1";
    header["meta"] = file.meta_json.empty() ? nlohmann::json::object()
                                            : nlohmann::json::parse(file.meta_json);
    auto& list = header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : file.tensors) {
        nlohmann::json e;
        e["name"] = t.name;
        e["shape"] = {t.value.rows(), t.value.cols()};
        e["dtype"] = "f32";
        e["offset"] = offset;
        offset += static_cast<std::uint64_t>(t.value.size()) * 4;
        list.push_back(std::move(e));
    }
    const std::string header_text = header.dump();

    std::string out;
    out.reserve(8 + header_text.size() + offset);
    append_u64_le(out, header_text.size());
    out += header_text;
    for (const auto& t : file.tensors) {
        // Row-major write so the byte layout is independent of Eigen's
        // default storage order.
        for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
                const float v = t.value(r, c);
                char buf[4];
                std::memcpy(buf, &v, 4);
                out.append(buf, 4);
            }
        }
    }
    return out;
}

void save(const std::string& path, const TensorFile& file) {
    write_file(path, to_bytes(file));
}

TensorFile load(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 8) throw std::runtime_error("tensor file too short: " + path);
    const std::uint64_t header_len = read_u64_le(bytes, 0);
    if (8 + header_len > bytes.size())
        throw std::runtime_error("tensor file header truncated: " + path);
    const auto header = nlohmann::json::parse(bytes.substr(8, header_len));
    if (header.value("format", "") != "trajta-tensors-v1")
        throw std::runtime_error("unrecognized tensor file format: " + path);

    TensorFile out;
    out.meta_json = header.at("meta").dump();
    const std::size_t payload_start = 8 + header_len;
    for (const auto& e : header.at("tensors")) {
        NamedTensor t;
        t.name = e.at("name").get<std::string>();
        const Eigen::Index rows = e.at("shape").at(0).get<Eigen::Index>();
        const Eigen::Index cols = e.at("shape").at(1).get<Eigen::Index>();
        if (e.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("unsupported dtype in " + path);
        const std::size_t offset = payload_start + e.at("offset").get<std::size_t>();
        const std::size_t nbytes = static_cast<std::size_t>(rows) * cols * 4;
        if (offset + nbytes > bytes.size())
            throw std::runtime_error("tensor payload out of bounds: " + t.name + " in " + path);
        t.value.resize(rows, cols);
        std::size_t at = offset;
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                float v;
                std::memcpy(&v, bytes.data() + at, 4);
                t.value(r, c) = v;
                at += 4;
            }
        }
        out.tensors.push_back(std::move(t));
    }
    return out;
}

}  // namespace trajta::container
