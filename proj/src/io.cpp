#include "imgtrace/detail/io.hpp"

#include <atomic>
#include <random>
#include <sstream>

#include "imgtrace/errors.hpp"

namespace imgtrace::detail {

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string read_file_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

namespace {
std::filesystem::path temp_sibling(const std::filesystem::path& path) {
    static std::atomic<uint64_t> counter{0};
    auto n = counter.fetch_add(1);
    return path.parent_path() / (path.filename().string() + ".tmp." + std::to_string(n));
}
}  // namespace

void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = temp_sibling(path);
    try {
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot create " + tmp.string());
            writer(out);
            out.flush();
            if (!out) throw IoError("write failed for " + tmp.string());
        }
        std::filesystem::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
}

void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    atomic_write(path, [&](std::ostream& out) { out << content; });
}

}  // namespace imgtrace::detail
