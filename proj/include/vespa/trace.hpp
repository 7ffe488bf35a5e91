#pragma once

#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vespa/addr.hpp"
#include "vespa/rng.hpp"

namespace vespa {

enum class RecordKind : std::uint8_t { Read, Write, InstrCount, Promote, Demote };

/// `value` is the virtual address (Read/Write), the instruction count
/// (InstrCount) or the 2MB region base (Promote/Demote). OS events carry
/// thread 0.
struct TraceRecord {
    RecordKind kind = RecordKind::Read;
    std::uint32_t thread_id = 0;
    std::uint64_t value = 0;

    [[nodiscard]] bool is_memory() const {
        return kind == RecordKind::Read || kind == RecordKind::Write;
    }

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

class TraceError : public std::runtime_error {
public:
    TraceError(const std::string& source, std::size_t line, const std::string& what);

    [[nodiscard]] std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Parses one text line; nullopt for blank and comment-only lines.
/// Throws TraceError naming `source:line_no`.
std::optional<TraceRecord> parse_line(std::string_view text, std::size_t line_no,
                                      const std::string& source = "<input>");

std::vector<TraceRecord> parse_trace(std::istream& in, const std::string& source = "<input>");

std::string format_record(const TraceRecord& record);

/// Writes `header` (each line prefixed with "# ") followed by one record per line.
void emit_trace(std::ostream& out, std::span<const TraceRecord> records,
                const std::string& header = {});

/// Binary variant: "VSPBTRC1" then, per record, a length byte (13), the kind
/// byte, a little-endian u32 thread id and a little-endian u64 value.
void write_binary_trace(std::ostream& out, std::span<const TraceRecord> records);
std::vector<TraceRecord> read_binary_trace(std::istream& in, const std::string& source = "<input>");

/// Pull-based record stream.
class RecordSource {
public:
    virtual ~RecordSource() = default;
    virtual std::optional<TraceRecord> next() = 0;
};

class VectorSource final : public RecordSource {
public:
    explicit VectorSource(std::vector<TraceRecord> records) : records_(std::move(records)) {}
    std::optional<TraceRecord> next() override {
        if (pos_ >= records_.size()) return std::nullopt;
        return records_[pos_++];
    }

private:
    std::vector<TraceRecord> records_;
    std::size_t pos_ = 0;
};

/// Streams a `.trace` (text) or `.btrace` (binary) file, chosen by extension.
/// Throws TraceError if the file cannot be opened.
class FileSource final : public RecordSource {
public:
    explicit FileSource(const std::string& path);
    std::optional<TraceRecord> next() override;

private:
    std::string path_;
    std::ifstream in_;
    bool binary_ = false;
    std::size_t line_no_ = 0;
    std::string line_;
};

/// Streaming writer; the format follows the file extension like FileSource.
class TraceWriter {
public:
    explicit TraceWriter(const std::string& path, const std::string& header = {});
    void write(const TraceRecord& record);
    /// Flushes and throws if any write failed.
    void close();

private:
    std::string path_;
    std::ofstream out_;
    bool binary_ = false;
};

std::vector<TraceRecord> load_trace_file(const std::string& path);
void save_trace_file(const std::string& path, std::span<const TraceRecord> records,
                     const std::string& header = {});

enum class GeneratorModel : std::uint8_t { Uniform, HotspotZipf, Stream, PointerChase };

const char* to_string(GeneratorModel model);
GeneratorModel parse_generator_model(std::string_view name);

struct GeneratorSpec {
    GeneratorModel model = GeneratorModel::Uniform;
    std::uint64_t footprint_bytes = 1u << 20;
    std::uint64_t accesses = 100000;  // per thread
    double zipf_exponent = 1.0;
    std::uint64_t stride_bytes = 64;
    Addr base_vaddr = 0x10000000;
    double write_fraction = 0.0;
    /// Instructions per memory reference; emitted as `I` records every 256 references.
    double instr_per_access = 3.0;
    unsigned threads = 1;
    /// Threads touch disjoint footprints (each offset by a 2MB-rounded footprint).
    bool private_footprints = false;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument naming the offending parameter.
    void validate() const;
    [[nodiscard]] std::uint64_t lines() const { return footprint_bytes / 64; }
};

/// Multi-line description used as the header comment of generated traces.
std::string describe(const GeneratorSpec& spec);

/// Lazily generates a trace; threads are interleaved one reference at a time.
/// Identical specs produce identical record sequences.
class GeneratorSource final : public RecordSource {
public:
    explicit GeneratorSource(const GeneratorSpec& spec);
    ~GeneratorSource() override;
    std::optional<TraceRecord> next() override;

private:
    struct Thread;
    GeneratorSpec spec_;
    std::vector<std::unique_ptr<Thread>> threads_;
    std::shared_ptr<const std::vector<double>> zipf_cdf_;
    std::shared_ptr<const std::vector<std::uint32_t>> chase_next_;
    std::uint64_t zipf_a_ = 1;
    std::uint64_t zipf_b_ = 0;
    std::uint64_t index_ = 0;  // references emitted per thread
    unsigned turn_ = 0;
    std::vector<TraceRecord> pending_;
};

std::vector<TraceRecord> generate(const GeneratorSpec& spec);

}  // namespace vespa
