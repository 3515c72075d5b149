// Binary layout, little-endian:
//   "TEPC" u32 version u32 tensor_count
//   per tensor: u32 name_len, name bytes, u8 dtype (0 = fp32), u32 rank, u64 dims[rank], u64 byte offset
//   u64 payload_bytes, fp32 payload
//   u64 metadata_bytes, metadata JSON (configs, preprocessing stats, seeds, training log)

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_codec.hpp"
#include "tep/fusion.hpp"

namespace tep {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'E', 'P', 'C'};
constexpr std::uint8_t kDtypeF32 = 0;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
public:
    Reader(std::string bytes, std::string file) : bytes_(std::move(bytes)), file_(std::move(file)) {}

    template <class T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof v), sizeof v);
        return v;
    }
    const char* take(std::size_t n) {
        if (n > bytes_.size() - pos_) fail("truncated at byte " + std::to_string(pos_));
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& what) const {
        throw InvalidArgument("checkpoint " + file_ + ": " + what);
    }

private:
    std::string bytes_;
    std::string file_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, 4);
    put<std::uint32_t>(out, ck.version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.model.params.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ck.model.params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint8_t>(out, kDtypeF32);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint64_t>(out, d);
        put<std::uint64_t>(out, offset);
        offset += t.size() * sizeof(float);
    }
    put<std::uint64_t>(out, offset);
    for (const auto& [name, t] : ck.model.params)
        for (double v : t.data()) put<float>(out, static_cast<float>(v));

    const codec::json meta = {{"format", "tep-checkpoint"},
                              {"fusion", codec::encode(ck.model.config)},
                              {"preprocess", codec::encode(ck.stats)},
                              {"schedule", codec::encode(ck.schedule)},
                              {"train", codec::encode(ck.train)},
                              {"rng",
                               {{"engine", "mt19937_64"},
                                {"seed", ck.train.seed},
                                {"streams", {"init.<channel>", "init.fusion", "shuffle", "dropout"}}}},
                              {"log", codec::encode(ck.log)}};
    const std::string text = meta.dump(1);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    std::filesystem::create_directories(path.has_parent_path() ? path.parent_path() : ".");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InvalidArgument("cannot write checkpoint " + path.string());
    const std::string bytes = out.str();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InvalidArgument("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InvalidArgument("cannot open checkpoint " + path.string());
    Reader in(std::string(std::istreambuf_iterator<char>(f), {}), path.string());

    if (std::memcmp(in.take(4), kMagic, 4) != 0) in.fail("bad magic");
    Checkpoint ck;
    ck.version = in.get<std::uint32_t>();
    if (ck.version != kCheckpointVersion) in.fail("unsupported version " + std::to_string(ck.version));

    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries(in.get<std::uint32_t>());
    for (auto& e : entries) {
        const auto len = in.get<std::uint32_t>();
        e.name.assign(in.take(len), len);
        if (in.get<std::uint8_t>() != kDtypeF32) in.fail("tensor '" + e.name + "' has an unknown dtype");
        e.shape.resize(in.get<std::uint32_t>());
        for (auto& d : e.shape) d = in.get<std::uint64_t>();
        e.offset = in.get<std::uint64_t>();
    }
    const auto payload_bytes = in.get<std::uint64_t>();
    const char* payload = in.take(payload_bytes);
    for (const auto& e : entries) {
        const std::uint64_t n = shape_size(e.shape);
        if (e.offset > payload_bytes || n * sizeof(float) > payload_bytes - e.offset)
            in.fail("tensor '" + e.name + "' lies outside the payload");
        std::vector<double> data(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            float v;
            std::memcpy(&v, payload + e.offset + i * sizeof(float), sizeof v);
            data[i] = v;
        }
        if (!ck.model.params.emplace(e.name, Tensor(e.shape, std::move(data))).second)
            in.fail("duplicate tensor '" + e.name + "'");
    }

    const auto meta_bytes = in.get<std::uint64_t>();
    const std::string text(in.take(meta_bytes), meta_bytes);
    if (!in.at_end()) in.fail("trailing bytes");
    codec::json meta;
    try {
        meta = codec::json::parse(text);
    } catch (const codec::json::parse_error& e) {
        in.fail(std::string("metadata is not valid JSON: ") + e.what());
    }
    try {
        codec::ObjectReader r(meta, "");
        std::string format;
        r.get("format", format);
        if (format != "tep-checkpoint") in.fail("metadata format '" + format + "'");
        auto section = [&](const char* key) -> const codec::json& {
            const codec::json* v = r.find(key);
            if (!v) in.fail(std::string("metadata lacks '") + key + "'");
            return *v;
        };
        codec::decode(section("fusion"), "fusion", ck.model.config);
        codec::decode(section("preprocess"), "preprocess", ck.stats);
        codec::decode(section("schedule"), "schedule", ck.schedule);
        codec::decode(section("train"), "train", ck.train);
        codec::decode(section("log"), "log", ck.log);
        r.find("rng");  // informational
        r.finish();
    } catch (const ConfigError& e) {
        in.fail(std::string("metadata: ") + e.what());
    }

    // Every configured parameter must be present with the right shape.
    const MultimodalModel expected = init_multimodal(ck.model.config, 0);
    for (const auto& [name, t] : expected.params) {
        auto it = ck.model.params.find(name);
        if (it == ck.model.params.end()) in.fail("missing tensor '" + name + "'");
        if (it->second.shape() != t.shape())
            in.fail("tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) + ", expected " +
                    shape_to_string(t.shape()));
    }
    if (expected.params.size() != ck.model.params.size()) in.fail("unexpected extra tensors");
    return ck;
}

}  // namespace tep
