#pragma once

#include <string>

namespace attrseg {

// SHA-256 hex digest of a byte string.
std::string sha256_hex(const std::string& bytes);

// SHA-256 hex digest of a file's bytes. Throws on unreadable path.
std::string sha256_file(const std::string& path);

}  // namespace attrseg
