#include "vespa/trace.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace vespa {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'P', 'B', 'T', 'R', 'C', '1'};
constexpr std::uint8_t kRecordLength = 13;
constexpr std::uint64_t kInstrBatch = 256;
constexpr std::uint64_t kMaxTableLines = std::uint64_t{1} << 24;
constexpr Addr kRegionBytes = page_bytes(PageSize::Super2M);

__extension__ using u128 = unsigned __int128;

bool has_suffix(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
std::optional<T> parse_int(std::string_view s, int base) {
    if (base == 16 && (s.starts_with("0x") || s.starts_with("0X"))) s.remove_prefix(2);
    if (s.empty()) return std::nullopt;
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

char opcode(RecordKind kind) {
    switch (kind) {
    case RecordKind::Read: return 'R';
    case RecordKind::Write: return 'W';
    case RecordKind::InstrCount: return 'I';
    case RecordKind::Promote: return 'P';
    case RecordKind::Demote: return 'D';
    }
    return '?';
}

// Shared by the text and binary readers.
void validate_record(const TraceRecord& r, const std::string& source, std::size_t line) {
    switch (r.kind) {
    case RecordKind::Read:
    case RecordKind::Write:
        if (r.value & ~kAddressMask)
            throw TraceError(source, line, fmt::format("address {:#x} exceeds 48 bits", r.value));
        break;
    case RecordKind::InstrCount:
        if (r.value == 0) throw TraceError(source, line, "instruction count must be at least 1");
        break;
    case RecordKind::Promote:
    case RecordKind::Demote:
        if (r.value & ~kAddressMask)
            throw TraceError(source, line, fmt::format("region base {:#x} exceeds 48 bits", r.value));
        if (r.value & (kRegionBytes - 1))
            throw TraceError(source, line, fmt::format("region base {:#x} is not 2MB-aligned", r.value));
        break;
    }
}

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

// Reads one binary record; nullopt at clean end of stream.
std::optional<TraceRecord> read_binary_record(std::istream& in, const std::string& source,
                                              std::size_t index) {
    const int len = in.get();
    if (len == std::char_traits<char>::eof()) return std::nullopt;
    if (len != kRecordLength)
        throw TraceError(source, index, fmt::format("bad record length {}", len));
    std::array<unsigned char, kRecordLength> buf{};
    if (!in.read(reinterpret_cast<char*>(buf.data()), kRecordLength))
        throw TraceError(source, index, "truncated record");
    if (buf[0] > static_cast<unsigned char>(RecordKind::Demote))
        throw TraceError(source, index, fmt::format("unknown record kind {}", buf[0]));
    TraceRecord r;
    r.kind = static_cast<RecordKind>(buf[0]);
    for (int i = 0; i < 4; ++i) r.thread_id |= std::uint32_t{buf[1 + i]} << (8 * i);
    for (int i = 0; i < 8; ++i) r.value |= std::uint64_t{buf[5 + i]} << (8 * i);
    validate_record(r, source, index);
    return r;
}

void expect_magic(std::istream& in, const std::string& source) {
    char magic[sizeof kMagic] = {};
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic))
        throw TraceError(source, 0, "missing VSPBTRC1 header");
}

}  // namespace

TraceError::TraceError(const std::string& source, std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("{}:{}: {}", source, line, what)), line_(line) {}

std::optional<TraceRecord> parse_line(std::string_view text, std::size_t line_no,
                                      const std::string& source) {
    if (auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    const auto tok = split_ws(text);
    if (tok.empty()) return std::nullopt;
    if (tok[0].size() != 1) throw TraceError(source, line_no, fmt::format("unknown opcode '{}'", tok[0]));

    TraceRecord r;
    const char op = tok[0][0];
    auto want = [&](std::size_t n) {
        if (tok.size() != n) {
            throw TraceError(source, line_no,
                             fmt::format("'{}' takes {} operand(s), got {}", op, n - 1, tok.size() - 1));
        }
    };
    auto tid = [&] {
        auto v = parse_int<std::uint32_t>(tok[1], 10);
        if (!v) throw TraceError(source, line_no, fmt::format("bad thread id '{}'", tok[1]));
        return *v;
    };
    auto hex = [&](std::string_view s) {
        auto v = parse_int<std::uint64_t>(s, 16);
        if (!v) throw TraceError(source, line_no, fmt::format("bad hex address '{}'", s));
        return *v;
    };

    switch (op) {
    case 'R':
    case 'W':
        want(3);
        r.kind = op == 'R' ? RecordKind::Read : RecordKind::Write;
        r.thread_id = tid();
        r.value = hex(tok[2]);
        break;
    case 'I': {
        want(3);
        r.kind = RecordKind::InstrCount;
        r.thread_id = tid();
        auto v = parse_int<std::uint64_t>(tok[2], 10);
        if (!v) throw TraceError(source, line_no, fmt::format("bad instruction count '{}'", tok[2]));
        r.value = *v;
        break;
    }
    case 'P':
    case 'D':
        want(2);
        r.kind = op == 'P' ? RecordKind::Promote : RecordKind::Demote;
        r.value = hex(tok[1]);
        break;
    default: throw TraceError(source, line_no, fmt::format("unknown opcode '{}'", op));
    }
    validate_record(r, source, line_no);
    return r;
}

std::vector<TraceRecord> parse_trace(std::istream& in, const std::string& source) {
    std::vector<TraceRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (auto r = parse_line(line, ++n, source)) out.push_back(*r);
    }
    return out;
}

std::string format_record(const TraceRecord& r) {
    switch (r.kind) {
    case RecordKind::Read:
    case RecordKind::Write: return fmt::format("{} {} {:#x}", opcode(r.kind), r.thread_id, r.value);
    case RecordKind::InstrCount: return fmt::format("I {} {}", r.thread_id, r.value);
    case RecordKind::Promote:
    case RecordKind::Demote: return fmt::format("{} {:#x}", opcode(r.kind), r.value);
    }
    return {};
}

void emit_trace(std::ostream& out, std::span<const TraceRecord> records, const std::string& header) {
    if (!header.empty()) {
        std::istringstream lines(header);
        std::string line;
        while (std::getline(lines, line)) out << "# " << line << '\n';
    }
    for (const auto& r : records) out << format_record(r) << '\n';
}

void write_binary_trace(std::ostream& out, std::span<const TraceRecord> records) {
    out.write(kMagic, sizeof kMagic);
    for (const auto& r : records) {
        out.put(static_cast<char>(kRecordLength));
        out.put(static_cast<char>(r.kind));
        put_le(out, r.thread_id, 4);
        put_le(out, r.value, 8);
    }
}

std::vector<TraceRecord> read_binary_trace(std::istream& in, const std::string& source) {
    expect_magic(in, source);
    std::vector<TraceRecord> out;
    while (auto r = read_binary_record(in, source, out.size() + 1)) out.push_back(*r);
    return out;
}

FileSource::FileSource(const std::string& path)
    : path_(path), binary_(has_suffix(path, ".btrace")) {
    in_.open(path, binary_ ? std::ios::binary : std::ios::in);
    if (!in_) throw TraceError(path, 0, "cannot open trace file");
    if (binary_) expect_magic(in_, path_);
}

std::optional<TraceRecord> FileSource::next() {
    if (binary_) return read_binary_record(in_, path_, ++line_no_);
    while (std::getline(in_, line_)) {
        if (auto r = parse_line(line_, ++line_no_, path_)) return r;
    }
    return std::nullopt;
}

std::vector<TraceRecord> load_trace_file(const std::string& path) {
    FileSource src(path);
    std::vector<TraceRecord> out;
    while (auto r = src.next()) out.push_back(*r);
    return out;
}

TraceWriter::TraceWriter(const std::string& path, const std::string& header)
    : path_(path), binary_(has_suffix(path, ".btrace")) {
    out_.open(path, binary_ ? std::ios::binary : std::ios::out);
    if (!out_) throw std::runtime_error(fmt::format("cannot write {}", path));
    if (binary_) write_binary_trace(out_, {});
    else emit_trace(out_, {}, header);
}

void TraceWriter::write(const TraceRecord& r) {
    if (binary_) {
        out_.put(static_cast<char>(kRecordLength));
        out_.put(static_cast<char>(r.kind));
        put_le(out_, r.thread_id, 4);
        put_le(out_, r.value, 8);
    } else {
        out_ << format_record(r) << '\n';
    }
}

void TraceWriter::close() {
    out_.flush();
    if (!out_) throw std::runtime_error(fmt::format("error writing {}", path_));
    out_.close();
}

void save_trace_file(const std::string& path, std::span<const TraceRecord> records,
                     const std::string& header) {
    TraceWriter w(path, header);
    for (const auto& r : records) w.write(r);
    w.close();
}

// ---------------------------------------------------------------------------
// Generators

const char* to_string(GeneratorModel model) {
    switch (model) {
    case GeneratorModel::Uniform: return "uniform";
    case GeneratorModel::HotspotZipf: return "hotspot-zipf";
    case GeneratorModel::Stream: return "stream";
    case GeneratorModel::PointerChase: return "pointer-chase";
    }
    return "?";
}

GeneratorModel parse_generator_model(std::string_view name) {
    for (auto m : {GeneratorModel::Uniform, GeneratorModel::HotspotZipf, GeneratorModel::Stream,
                   GeneratorModel::PointerChase}) {
        if (name == to_string(m)) return m;
    }
    if (name == "zipf") return GeneratorModel::HotspotZipf;
    throw std::invalid_argument(fmt::format(
        "unknown generator model '{}' (uniform|hotspot-zipf|stream|pointer-chase)", name));
}

namespace {

std::uint64_t thread_span(const GeneratorSpec& s) {
    return (s.footprint_bytes + kRegionBytes - 1) / kRegionBytes * kRegionBytes;
}

}  // namespace

void GeneratorSpec::validate() const {
    if (footprint_bytes < 64)
        throw std::invalid_argument(fmt::format("gen.footprint={} is below one 64B line", footprint_bytes));
    if (threads < 1 || threads > 64)
        throw std::invalid_argument(fmt::format("gen.threads={} must be in [1, 64]", threads));
    const std::uint64_t span = private_footprints ? thread_span(*this) * threads : footprint_bytes;
    if (base_vaddr > kAddressMask || span > kAddressMask + 1 - base_vaddr) {
        throw std::invalid_argument(fmt::format(
            "gen.footprint={} at base {:#x} exceeds the 48-bit address space", footprint_bytes, base_vaddr));
    }
    if ((model == GeneratorModel::HotspotZipf || model == GeneratorModel::PointerChase) &&
        lines() > kMaxTableLines) {
        throw std::invalid_argument(fmt::format("gen.footprint={} exceeds {} lines for model {}",
                                                footprint_bytes, kMaxTableLines, to_string(model)));
    }
    if (accesses < 1) throw std::invalid_argument("gen.accesses must be at least 1");
    if (!(zipf_exponent >= 0.0)) throw std::invalid_argument("gen.zipf_s must be >= 0");
    if (model == GeneratorModel::Stream && stride_bytes == 0)
        throw std::invalid_argument("gen.stride must be positive");
    if (!(write_fraction >= 0.0 && write_fraction <= 1.0))
        throw std::invalid_argument(fmt::format("gen.write_fraction={} is outside [0,1]", write_fraction));
    if (!(instr_per_access >= 0.0))
        throw std::invalid_argument("gen.instr_per_access must be >= 0");
}

std::string describe(const GeneratorSpec& s) {
    std::string shape;
    switch (s.model) {
    case GeneratorModel::Uniform: shape = "lines drawn uniformly from the footprint"; break;
    case GeneratorModel::HotspotZipf:
        shape = fmt::format("zipf(s={}) over line ranks; ranks scattered by an affine permutation",
                            s.zipf_exponent);
        break;
    case GeneratorModel::Stream:
        shape = fmt::format("sequential, stride {} bytes, wrapping at the footprint", s.stride_bytes);
        break;
    case GeneratorModel::PointerChase:
        shape = "single random cycle through every line (Sattolo permutation)";
        break;
    }
    return fmt::format(
        "vespa trace model={} footprint={} lines={} accesses_per_thread={} threads={} seed={}\n"
        "base={:#x} private_footprints={} write_fraction={} instr_per_access={}\n"
        "shape: {}",
        to_string(s.model), s.footprint_bytes, s.lines(), s.accesses, s.threads, s.seed, s.base_vaddr,
        s.private_footprints, s.write_fraction, s.instr_per_access, shape);
}

struct GeneratorSource::Thread {
    Rng addr_rng;
    Rng write_rng;
    Addr base;
    std::uint64_t chase = 0;
    Thread(std::uint64_t seed, Addr b)
        : addr_rng(splitmix64(seed)), write_rng(splitmix64(seed ^ 0xA5A5A5A5A5A5A5A5ULL)), base(b) {}
};

GeneratorSource::GeneratorSource(const GeneratorSpec& spec) : spec_(spec) {
    spec_.validate();
    const std::uint64_t lines = spec_.lines();

    if (spec_.model == GeneratorModel::HotspotZipf) {
        auto cdf = std::make_shared<std::vector<double>>(lines);
        double sum = 0.0;
        for (std::uint64_t k = 0; k < lines; ++k) {
            sum += std::pow(static_cast<double>(k + 1), -spec_.zipf_exponent);
            (*cdf)[k] = sum;
        }
        for (auto& c : *cdf) c /= sum;
        zipf_cdf_ = std::move(cdf);
        // Scatter ranks with an affine permutation so the hot lines are not adjacent.
        if (lines > 1) {
            zipf_a_ = splitmix64(spec_.seed * 31 + 7) % lines | 1;
            while (std::gcd(zipf_a_, lines) != 1) zipf_a_ += 2;
            zipf_b_ = splitmix64(spec_.seed * 17 + 3) % lines;
        }
    }
    if (spec_.model == GeneratorModel::PointerChase) {
        auto next = std::make_shared<std::vector<std::uint32_t>>(lines);
        std::iota(next->begin(), next->end(), 0u);
        // Sattolo's algorithm yields a single cycle through every line.
        Rng rng(splitmix64(spec_.seed ^ 0xC4A5E));
        for (std::uint64_t i = lines - 1; i > 0; --i) std::swap((*next)[i], (*next)[rng.below(i)]);
        chase_next_ = std::move(next);
    }

    for (unsigned t = 0; t < spec_.threads; ++t) {
        const Addr base = spec_.base_vaddr + (spec_.private_footprints ? t * thread_span(spec_) : 0);
        auto th = std::make_unique<Thread>(spec_.seed ^ splitmix64(t + 1), base);
        if (chase_next_) th->chase = splitmix64(spec_.seed + t) % lines;
        threads_.push_back(std::move(th));
    }
}

GeneratorSource::~GeneratorSource() = default;

std::optional<TraceRecord> GeneratorSource::next() {
    if (turn_ < pending_.size()) return pending_[turn_++];
    if (index_ >= spec_.accesses) return std::nullopt;

    pending_.clear();
    turn_ = 0;
    const std::uint64_t lines = spec_.lines();

    for (unsigned t = 0; t < spec_.threads; ++t) {
        Thread& th = *threads_[t];
        std::uint64_t offset = 0;
        switch (spec_.model) {
        case GeneratorModel::Uniform: offset = th.addr_rng.below(lines) * 64; break;
        case GeneratorModel::HotspotZipf: {
            const auto& cdf = *zipf_cdf_;
            const double u = th.addr_rng.uniform();
            auto rank = static_cast<std::uint64_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            rank = std::min(rank, lines - 1);
            offset = ((zipf_a_ * rank + zipf_b_) % lines) * 64;  // both factors < 2^24
            break;
        }
        case GeneratorModel::Stream:
            offset = static_cast<std::uint64_t>(static_cast<u128>(index_) * spec_.stride_bytes %
                                                spec_.footprint_bytes);
            break;
        case GeneratorModel::PointerChase:
            offset = th.chase * 64;
            th.chase = (*chase_next_)[th.chase];
            break;
        }
        const bool write = th.write_rng.uniform() < spec_.write_fraction;
        pending_.push_back({write ? RecordKind::Write : RecordKind::Read, t, th.base + offset});
    }

    ++index_;
    if (spec_.instr_per_access > 0.0 && (index_ % kInstrBatch == 0 || index_ == spec_.accesses)) {
        const std::uint64_t start = (index_ - 1) / kInstrBatch * kInstrBatch;
        const auto count = static_cast<std::uint64_t>(std::llround(spec_.instr_per_access * index_) -
                                                      std::llround(spec_.instr_per_access * start));
        if (count > 0) {
            for (unsigned t = 0; t < spec_.threads; ++t)
                pending_.push_back({RecordKind::InstrCount, t, count});
        }
    }
    return pending_[turn_++];
}

std::vector<TraceRecord> generate(const GeneratorSpec& spec) {
    GeneratorSource src(spec);
    std::vector<TraceRecord> out;
    while (auto r = src.next()) out.push_back(*r);
    return out;
}

}  // namespace vespa
