#include "stackbundle/dstack.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stackbundle {

static_assert(std::endian::native == std::endian::little,
              "dstack i/o assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'S', 'T', 'K'};

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

} // namespace

std::vector<std::uint8_t> dstack_to_bytes(const Tensor& t) {
    std::vector<std::uint8_t> out;
    out.reserve(7 + 8 * t.ndim() + 8 * t.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(1);  // version
    out.push_back(1);  // dtype float64 LE
    out.push_back(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.dims()) append_u64(out, d);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
    out.insert(out.end(), raw, raw + 8 * t.size());
    return out;
}

Tensor dstack_from_bytes(const std::uint8_t* data, std::size_t len, std::size_t* consumed) {
    if (len < 7 || std::memcmp(data, kMagic, 4) != 0)
        throw IoError("dstack: bad magic");
    if (data[4] != 1) throw IoError("dstack: unsupported version");
    if (data[5] != 1) throw IoError("dstack: unsupported dtype");
    const std::size_t ndim = data[6];
    if (ndim == 0) throw IoError("dstack: ndim must be >= 1");
    std::size_t off = 7;
    if (len < off + 8 * ndim) throw IoError("dstack: truncated header");
    std::vector<std::size_t> dims(ndim);
    for (std::size_t i = 0; i < ndim; ++i) {
        dims[i] = static_cast<std::size_t>(read_u64(data + off));
        off += 8;
    }
    const std::size_t count = shape_product(dims);
    if (len < off + 8 * count) throw IoError("dstack: payload length mismatch");
    std::vector<double> values(count);
    std::memcpy(values.data(), data + off, 8 * count);
    off += 8 * count;
    if (consumed) *consumed = off;
    return Tensor::from_external(std::move(dims), std::move(values));
}

void dstack_write(std::ostream& out, const Tensor& t) {
    auto bytes = dstack_to_bytes(t);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("dstack: write failed");
}

Tensor dstack_read(std::istream& in) {
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string s = buf.str();
    return dstack_from_bytes(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

void dstack_save(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("dstack: cannot open for write: " + path);
    dstack_write(f, t);
}

Tensor dstack_load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("dstack: cannot open for read: " + path);
    return dstack_read(f);
}

std::vector<std::uint8_t> block_to_bytes(const std::vector<Record>& records) {
    const std::size_t arity = records.empty() ? 0 : records[0].size();
    Tensor header({1, 2}, {static_cast<double>(records.size()), static_cast<double>(arity)});
    std::vector<std::uint8_t> out = dstack_to_bytes(header);
    for (const Record& r : records) {
        if (r.size() != arity) throw ShapeError("block_to_bytes: ragged record arity");
        for (const Tensor& t : r) {
            auto b = dstack_to_bytes(t);
            out.insert(out.end(), b.begin(), b.end());
        }
    }
    return out;
}

std::vector<Record> block_from_bytes(const std::uint8_t* data, std::size_t len) {
    std::size_t off = 0, used = 0;
    Tensor header = dstack_from_bytes(data, len, &used);
    off += used;
    if (header.size() != 2) throw IoError("block: bad header tensor");
    const auto count = static_cast<std::size_t>(header[0]);
    const auto arity = static_cast<std::size_t>(header[1]);
    std::vector<Record> records;
    records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Record r;
        r.reserve(arity);
        for (std::size_t j = 0; j < arity; ++j) {
            r.push_back(dstack_from_bytes(data + off, len - off, &used));
            off += used;
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::size_t record_payload_bytes(const Record& r) {
    std::size_t n = 0;
    for (const Tensor& t : r) n += 8 * t.size();
    return n;
}

} // namespace stackbundle
