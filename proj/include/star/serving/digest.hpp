#pragma once

#include <string>
#include <string_view>

namespace star::serving {

/// MD5 of the exact bytes, 32 lowercase hex characters.
std::string md5_hex(std::string_view bytes);

}  // namespace star::serving
