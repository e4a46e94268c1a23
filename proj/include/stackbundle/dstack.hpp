#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stackbundle/tensor.hpp"

namespace stackbundle {

// dstack framing: "DSTK" | version u8=1 | dtype u8=1 (float64 LE) |
// ndim u8 | dims ndim x u64 LE | payload row-major float64 LE.

void dstack_write(std::ostream& out, const Tensor& t);
Tensor dstack_read(std::istream& in);

void dstack_save(const std::string& path, const Tensor& t);
Tensor dstack_load(const std::string& path);

std::vector<std::uint8_t> dstack_to_bytes(const Tensor& t);
Tensor dstack_from_bytes(const std::uint8_t* data, std::size_t len, std::size_t* consumed = nullptr);

/// Record/block framing used for spill files and the wire: a leading 1-D
/// dstack tensor [num_records, arity] followed by num_records * arity
/// dstack-framed tensors.
using Record = std::vector<Tensor>;

std::vector<std::uint8_t> block_to_bytes(const std::vector<Record>& records);
std::vector<Record> block_from_bytes(const std::uint8_t* data, std::size_t len);

std::size_t record_payload_bytes(const Record& r);

} // namespace stackbundle
