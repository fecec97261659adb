#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace avi::io {

std::string read_text(const std::string& path);
std::vector<std::uint8_t> read_bytes(const std::string& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_atomic(const std::string& path, std::span<const std::uint8_t> bytes);
void write_atomic(const std::string& path, const std::string& text);

// Little-endian scalar packing for the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset);

// Token streams: one decimal id per line, '#' comments allowed.
std::vector<std::int64_t> parse_token_stream(const std::string& text);
std::string format_token_stream(std::span<const std::int64_t> ids);

/// Blocks of token streams separated by blank lines.
std::vector<std::vector<std::int64_t>> parse_token_blocks(const std::string& text);

}  // namespace avi::io
