#include "screenseg/util.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "screenseg/error.hpp"

namespace screenseg {

uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t checksum_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for checksum: " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    }
    return h;
}

uint64_t checksum_tree(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
        const std::string rel = fs::relative(f, root).generic_string();
        h = fnv1a64(rel.data(), rel.size(), h);
        const uint64_t fh = checksum_file(f);
        h = fnv1a64(&fh, sizeof(fh), h);
    }
    return h;
}

std::string format_hex(uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file: " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path.string());
    out << text;
}

}  // namespace screenseg
