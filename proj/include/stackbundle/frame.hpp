#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stackbundle/errors.hpp"

namespace stackbundle {

enum class Opcode : std::uint8_t {
    Register = 0x01,
    RegisterAck = 0x02,
    Task = 0x03,
    TaskResult = 0x04,
    BlockGet = 0x05,
    BlockData = 0x06,
    Broadcast = 0x07,
    Heartbeat = 0x08,
    Shutdown = 0x09,
    Error = 0x0A,
};

constexpr std::uint32_t kMaxFramePayload = 256u * 1024 * 1024;

struct Frame {
    Opcode opcode = Opcode::Heartbeat;
    std::vector<std::uint8_t> payload;
};

/// length u32 LE (payload only) | opcode u8 | payload
std::vector<std::uint8_t> encode_frame(Opcode op, const std::vector<std::uint8_t>& payload);

/// Decodes one frame from `data`; sets consumed. Throws FramingError on a
/// truncated buffer, ProtocolError on unknown opcode or oversized length.
Frame decode_frame(const std::uint8_t* data, std::size_t len, std::size_t* consumed);

/// Mixed payloads: u32 json_len | json utf-8 | binary tail.
std::vector<std::uint8_t> pack_payload(const std::string& json,
                                       const std::vector<std::uint8_t>& binary);
std::pair<std::string, std::vector<std::uint8_t>> unpack_payload(
    const std::vector<std::uint8_t>& payload);

} // namespace stackbundle
