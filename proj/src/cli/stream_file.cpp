// SPDX-License-Identifier: Apache-2.0

#include "streammem/stream_file.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "streammem/errors.hpp"

namespace streammem {

using nlohmann::json;

void write_stream_file(const StreamFile& file, std::ostream& out) {
    json header = {{"dim", file.header.dim}, {"fps", file.header.fps}, {"count", file.frames.size()}};
    if (!file.header.needles.empty()) {
        header["needles"] = file.header.needles;
    }
    out << header.dump() << '\n';
    for (const auto& f : file.frames) {
        json line = {{"idx", f.frame_index}, {"emb", f.embedding}};
        out << line.dump() << '\n';
    }
}

void write_stream_file(const StreamFile& file, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open '" + path.string() + "' for writing");
    }
    write_stream_file(file, out);
    if (!out) {
        throw FormatError("failed writing '" + path.string() + "'");
    }
}

StreamFile read_stream_file(std::istream& in) {
    StreamFile file;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& what) {
        throw FormatError("stream file line " + std::to_string(lineno) + ": " + what);
    };

    if (!std::getline(in, line)) {
        throw FormatError("stream file is empty");
    }
    lineno = 1;
    try {
        const json header = json::parse(line);
        file.header.dim = header.at("dim").get<std::size_t>();
        file.header.fps = header.at("fps").get<double>();
        file.header.count = header.at("count").get<std::size_t>();
        if (header.contains("needles")) {
            file.header.needles = header.at("needles").get<std::vector<std::int64_t>>();
        }
    } catch (const json::exception& e) {
        fail(std::string("bad header: ") + e.what());
    }
    if (file.header.dim == 0) {
        fail("dim must be >= 1");
    }

    file.frames.reserve(file.header.count);
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        FrameEmbedding f;
        try {
            const json j = json::parse(line);
            f.frame_index = j.at("idx").get<std::int64_t>();
            f.embedding = j.at("emb").get<std::vector<float>>();
        } catch (const json::exception& e) {
            fail(std::string("bad frame record: ") + e.what());
        }
        if (f.frame_index != static_cast<std::int64_t>(file.frames.size())) {
            fail("expected idx " + std::to_string(file.frames.size()) + ", got " + std::to_string(f.frame_index));
        }
        if (f.embedding.size() != file.header.dim) {
            fail("embedding has " + std::to_string(f.embedding.size()) + " values, header says " +
                 std::to_string(file.header.dim));
        }
        file.frames.push_back(std::move(f));
    }
    if (file.frames.size() != file.header.count) {
        throw FormatError("stream file header promises " + std::to_string(file.header.count) + " frames, body has " +
                          std::to_string(file.frames.size()));
    }
    for (auto t : file.header.needles) {
        if (t < 0 || static_cast<std::size_t>(t) >= file.frames.size()) {
            throw FormatError("stream file header lists needle " + std::to_string(t) + " outside the stream");
        }
    }
    return file;
}

StreamFile read_stream_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open stream file '" + path.string() + "'");
    }
    return read_stream_file(in);
}

Matrix read_query_file(const std::filesystem::path& path, std::size_t width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open query file '" + path.string() + "'");
    }
    std::vector<std::vector<float>> rows;
    try {
        rows = json::parse(in).at("vectors").get<std::vector<std::vector<float>>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("query file: ") + e.what());
    }
    if (rows.empty()) {
        throw FormatError("query file holds no vectors");
    }
    for (const auto& r : rows) {
        if (r.size() != width) {
            throw FormatError("query vector has " + std::to_string(r.size()) + " values, expected " +
                              std::to_string(width));
        }
    }
    return Matrix::from_rows(rows);
}

} // namespace streammem
