#include "sketchmass/file_util.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sketchmass/errors.hpp"
#include "sketchmass/rng.hpp"

namespace sketchmass {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_checksum(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

}  // namespace sketchmass
