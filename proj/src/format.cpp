#include "imgtrace/detail/format.hpp"

#include <array>
#include <fstream>

#include "imgtrace/errors.hpp"

namespace imgtrace::detail {

std::string to_hex64(uint64_t value) {
    static const char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

uint64_t from_hex64(std::string_view hex) {
    if (hex.size() != 16) {
        throw ParseError("hash hex must be 16 characters, got '" + std::string(hex) + "'");
    }
    uint64_t value = 0;
    for (char c : hex) {
        value <<= 4;
        if (c >= '0' && c <= '9') {
            value |= static_cast<uint64_t>(c - '0');
        } else if (c >= 'a' && c <= 'f') {
            value |= static_cast<uint64_t>(c - 'a' + 10);
        } else if (c >= 'A' && c <= 'F') {
            value |= static_cast<uint64_t>(c - 'A' + 10);
        } else {
            throw ParseError("invalid hex digit in '" + std::string(hex) + "'");
        }
    }
    return value;
}

std::string with_thousands(uint64_t value) {
    std::string digits = std::to_string(value);
    std::string out;
    out.reserve(digits.size() + digits.size() / 3);
    size_t lead = digits.size() % 3;
    if (lead == 0) lead = 3;
    for (size_t i = 0; i < digits.size(); ++i) {
        if (i > 0 && (i - lead) % 3 == 0 && i >= lead) out.push_back(',');
        out.push_back(digits[i]);
    }
    return out;
}

int64_t percent_tenths(uint64_t count, uint64_t total) {
    if (total == 0) return 0;
    // round(count/total*1000) half-up, without floating point
    unsigned __int128 numer = static_cast<unsigned __int128>(count) * 2000 + total;
    return static_cast<int64_t>(numer / (static_cast<unsigned __int128>(total) * 2));
}

double percent_1dp(uint64_t count, uint64_t total) {
    return static_cast<double>(percent_tenths(count, total)) / 10.0;
}

std::string format_percent(uint64_t count, uint64_t total) {
    int64_t tenths = percent_tenths(count, total);
    return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

std::string base64_encode(std::span<const uint8_t> bytes) {
    static const char alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        uint32_t triple = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(alphabet[(triple >> 18) & 0x3f]);
        out.push_back(alphabet[(triple >> 12) & 0x3f]);
        out.push_back(alphabet[(triple >> 6) & 0x3f]);
        out.push_back(alphabet[triple & 0x3f]);
    }
    if (i + 1 == bytes.size()) {
        uint32_t rest = bytes[i] << 16;
        out.push_back(alphabet[(rest >> 18) & 0x3f]);
        out.push_back(alphabet[(rest >> 12) & 0x3f]);
        out += "==";
    } else if (i + 2 == bytes.size()) {
        uint32_t rest = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(alphabet[(rest >> 18) & 0x3f]);
        out.push_back(alphabet[(rest >> 12) & 0x3f]);
        out.push_back(alphabet[(rest >> 6) & 0x3f]);
        out.push_back('=');
    }
    return out;
}

uint64_t fnv1a64(std::span<const uint8_t> bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64(std::string_view text) {
    return fnv1a64(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    uint64_t h = 0xcbf29ce484222325ull;
    std::array<char, 65536> buf;
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<uint8_t>(buf[static_cast<size_t>(i)]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::string csv_quote(std::string_view field) {
    bool needs = field.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string xml_escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace imgtrace::detail
