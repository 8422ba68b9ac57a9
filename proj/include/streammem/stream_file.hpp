// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "streammem/frame_filter.hpp"
#include "streammem/numerics.hpp"

namespace streammem {

/// JSON-lines frame stream.
///
///   line 1:  {"dim": d, "fps": f, "count": n}            (+ optional "needles": [frame, ...])
///   line k:  {"idx": k-2, "emb": [d floats]}
///
/// idx runs 0, 1, 2, ... and the body must hold exactly count lines.
struct StreamHeader {
    std::size_t dim = 0;
    double fps = 0.5;
    std::size_t count = 0;
    std::vector<std::int64_t> needles;
};

struct StreamFile {
    StreamHeader header;
    std::vector<FrameEmbedding> frames;
};

void write_stream_file(const StreamFile& file, std::ostream& out);
void write_stream_file(const StreamFile& file, const std::filesystem::path& path);

/// Throws FormatError describing the first offending line.
StreamFile read_stream_file(std::istream& in);
StreamFile read_stream_file(const std::filesystem::path& path);

/// Reads {"vectors": [[...], ...]} into a q x width matrix. Throws FormatError.
Matrix read_query_file(const std::filesystem::path& path, std::size_t width);

} // namespace streammem
