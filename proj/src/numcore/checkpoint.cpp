#include "unitslab/numcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "unitslab/numcore/error.hpp"

namespace unitslab::numcore {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <typename T>
    void le(T v) {
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.push_back(static_cast<std::uint8_t>(u & 0xFF));
            u = static_cast<U>(u >> 8);
        }
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> data, const std::string& origin) : data_(data), origin_(origin) {}

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw FormatError(origin_, pos_, "unexpected end of file");
    }
    template <typename T>
    T le() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u = static_cast<decltype(u)>(u | (static_cast<decltype(u)>(data_[pos_ + i]) << (8 * i)));
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == data_.size(); }
    [[noreturn]] void fail(const std::string& what, std::size_t at) const { throw FormatError(origin_, at, what); }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    const std::string& origin_;
};

void write_entries(Writer& w, const NamedTensors& entries) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        if (name.size() > 0xFFFF) throw ValueError("checkpoint: parameter name too long: " + name);
        if (t.rank() > 0xFF) throw ValueError("checkpoint: rank too large for " + name);
        w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (double v : t.data()) w.f64(v);
    }
}

NamedTensors read_entries(Reader& r) {
    NamedTensors out;
    const auto count = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t entry_at = r.pos();
        const auto len = r.le<std::uint16_t>();
        std::string name = r.str(len);
        const auto rank = r.le<std::uint8_t>();
        Shape shape(rank);
        std::uint64_t n = 1;
        for (auto& d : shape) {
            const std::size_t at = r.pos();
            d = r.le<std::uint32_t>();
            if (d == 0) r.fail("zero dimension in '" + name + "'", at);
            n *= d;
            if (n > (std::uint64_t{1} << 32)) r.fail("tensor '" + name + "' too large", at);
        }
        r.need(n * 8);
        std::vector<double> values(n);
        for (auto& v : values) v = r.f64();
        if (out.contains(name)) r.fail("duplicate entry '" + name + "'", entry_at);
        try {
            out.insert(std::move(name), Tensor(std::move(shape), std::move(values)));
        } catch (const ValueError& e) {
            r.fail(e.what(), entry_at);
        }
    }
    return out;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params) {
    Writer w;
    w.bytes(kCheckpointMagic, 4);
    w.le<std::uint32_t>(kCheckpointVersion);
    write_entries(w, params.params);
    write_entries(w, params.momentum);
    w.le<std::uint64_t>(params.step_count);
    return w.take();
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin) {
    Reader r(bytes, origin);
    r.need(4);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) r.fail("bad magic", 0);
    r.str(4);
    const auto version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version), 4);

    ParamSet ps;
    ps.params = read_entries(r);
    const std::size_t momentum_at = r.pos();
    ps.momentum = read_entries(r);
    ps.step_count = r.le<std::uint64_t>();
    if (!r.done()) r.fail("trailing bytes", r.pos());

    if (ps.momentum.size() != ps.params.size()) r.fail("momentum count differs from parameter count", momentum_at);
    auto m = ps.momentum.begin();
    for (auto p = ps.params.begin(); p != ps.params.end(); ++p, ++m) {
        if (m->first != p->first || m->second.shape() != p->second.shape()) {
            r.fail("momentum buffer does not match parameter '" + p->first + "'", momentum_at);
        }
    }
    return ps;
}

void checkpoint_save(const ParamSet& params, const std::filesystem::path& path) {
    write_file_bytes(path, encode_checkpoint(params));
}

ParamSet checkpoint_load(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path), path.string());
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string hex_digest(std::uint64_t digest) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = kHex[digest & 0xF];
        digest >>= 4;
    }
    return s;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(path.string(), "read failed");
    return data;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string(), "write failed");
}

} // namespace unitslab::numcore
