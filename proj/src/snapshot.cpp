// SPDX-License-Identifier: Apache-2.0

#include "streammem/snapshot.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <system_error>

#include "streammem/errors.hpp"

namespace streammem {

namespace {

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

constexpr char kMagic[4] = {'S', 'K', 'V', '1'};

class Writer {
public:
    template <typename T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_floats(std::span<const float> v) {
        out_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
    }
    void put_raw(const char* p, std::size_t n) { out_.append(p, n); }
    std::string& str() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void get_floats(std::vector<float>& out, std::size_t n) {
        need(n * sizeof(float));
        out.resize(n);
        std::memcpy(out.data(), in_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (remaining() < n) {
            throw FormatError("snapshot truncated");
        }
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
    std::size_t left = bytes.size();
    while (left > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, std::numeric_limits<uInt>::max()));
        crc = crc32(crc, p, chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

} // namespace

std::string serialize_snapshot(const CompressedMemory& memory) {
    Writer w;
    w.put_raw(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kSnapshotVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(memory.n_layers()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(memory.n_heads()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(memory.head_dim()));
    w.put<std::uint64_t>(memory.budget.total);
    w.put<std::uint64_t>(memory.step);
    for (const auto& layer : memory.layers) {
        w.put<std::uint64_t>(layer.size());
        for (std::size_t i = 0; i < layer.size(); ++i) {
            w.put_floats(layer.key(i));
            w.put_floats(layer.value(i));
            w.put<float>(layer.scores()[i]);
            w.put<std::uint64_t>(layer.position_ids()[i]);
            w.put<std::int64_t>(layer.frame_ids()[i]);
            w.put<std::uint8_t>(layer.prototype_flags()[i]);
        }
    }
    const std::uint32_t crc = crc_of(w.str());
    w.put<std::uint32_t>(crc);
    return std::move(w.str());
}

CompressedMemory deserialize_snapshot(std::string_view bytes) {
    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t)) {
        throw FormatError("snapshot truncated");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - sizeof(std::uint32_t));
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + body.size(), sizeof(stored_crc));
    if (crc_of(body) != stored_crc) {
        throw FormatError("snapshot checksum mismatch");
    }
    if (std::memcmp(body.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("snapshot: bad magic");
    }

    Reader r(body.substr(sizeof(kMagic)));
    const auto version = r.get<std::uint32_t>();
    if (version != kSnapshotVersion) {
        throw FormatError("snapshot: unsupported version " + std::to_string(version));
    }
    const auto n_layers = r.get<std::uint32_t>();
    const auto n_heads = r.get<std::uint32_t>();
    const auto head_dim = r.get<std::uint32_t>();
    const auto budget = r.get<std::uint64_t>();
    const auto step = r.get<std::uint64_t>();

    CompressedMemory memory(n_layers, n_heads, head_dim, budget);
    memory.step = step;
    const std::size_t width = static_cast<std::size_t>(n_heads) * head_dim;
    const std::size_t record = 2 * width * sizeof(float) + sizeof(float) + 8 + 8 + 1;
    std::vector<float> key;
    std::vector<float> value;
    for (auto& layer : memory.layers) {
        const auto count = r.get<std::uint64_t>();
        if (record == 0 || count > r.remaining() / record) {
            throw FormatError("snapshot: entry count exceeds file size");
        }
        layer.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            r.get_floats(key, width);
            r.get_floats(value, width);
            const auto score = r.get<float>();
            const auto pos = r.get<std::uint64_t>();
            const auto frame = r.get<std::int64_t>();
            const auto proto = r.get<std::uint8_t>();
            if (proto > 1) {
                throw FormatError("snapshot: invalid prototype flag");
            }
            layer.push_back(key, value, score, pos, frame, proto != 0);
        }
    }
    if (r.remaining() != 0) {
        throw FormatError("snapshot: trailing bytes after last layer");
    }
    return memory;
}

void snapshot_save(const CompressedMemory& memory, const std::filesystem::path& path) {
    const std::string bytes = serialize_snapshot(memory);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("cannot open '" + tmp.string() + "' for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw FormatError("failed writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw FormatError("cannot move snapshot into place: " + ec.message());
    }
}

CompressedMemory snapshot_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open snapshot '" + path.string() + "'");
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_snapshot(bytes);
}

} // namespace streammem
