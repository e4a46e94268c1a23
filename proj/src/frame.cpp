#include "stackbundle/frame.hpp"

#include <cstring>

namespace stackbundle {

namespace {

bool known_opcode(std::uint8_t op) {
    return op >= 0x01 && op <= 0x0A;
}

} // namespace

std::vector<std::uint8_t> encode_frame(Opcode op, const std::vector<std::uint8_t>& payload) {
    if (payload.size() > kMaxFramePayload)
        throw ProtocolError("frame: payload exceeds cap");
    std::vector<std::uint8_t> out;
    out.reserve(5 + payload.size());
    const auto len = static_cast<std::uint32_t>(payload.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.push_back(static_cast<std::uint8_t>(op));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Frame decode_frame(const std::uint8_t* data, std::size_t len, std::size_t* consumed) {
    if (len < 5) throw FramingError("frame: truncated header");
    std::uint32_t plen = 0;
    for (int i = 0; i < 4; ++i) plen |= static_cast<std::uint32_t>(data[i]) << (8 * i);
    if (plen > kMaxFramePayload) throw ProtocolError("frame: length exceeds cap");
    const std::uint8_t op = data[4];
    if (!known_opcode(op)) throw ProtocolError("frame: unknown opcode");
    if (len < 5u + plen) throw FramingError("frame: truncated payload");
    Frame f;
    f.opcode = static_cast<Opcode>(op);
    f.payload.assign(data + 5, data + 5 + plen);
    if (consumed) *consumed = 5u + plen;
    return f;
}

std::vector<std::uint8_t> pack_payload(const std::string& json,
                                       const std::vector<std::uint8_t>& binary) {
    std::vector<std::uint8_t> out;
    out.reserve(4 + json.size() + binary.size());
    const auto jlen = static_cast<std::uint32_t>(json.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(jlen >> (8 * i)));
    out.insert(out.end(), json.begin(), json.end());
    out.insert(out.end(), binary.begin(), binary.end());
    return out;
}

std::pair<std::string, std::vector<std::uint8_t>> unpack_payload(
    const std::vector<std::uint8_t>& payload) {
    if (payload.size() < 4) throw ProtocolError("payload: truncated json length");
    std::uint32_t jlen = 0;
    for (int i = 0; i < 4; ++i) jlen |= static_cast<std::uint32_t>(payload[i]) << (8 * i);
    if (payload.size() < 4u + jlen) throw ProtocolError("payload: truncated json");
    std::string json(payload.begin() + 4, payload.begin() + 4 + jlen);
    std::vector<std::uint8_t> binary(payload.begin() + 4 + jlen, payload.end());
    return {std::move(json), std::move(binary)};
}

} // namespace stackbundle
