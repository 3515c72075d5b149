#include "tep/interpret.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tep/error.hpp"

namespace tep {

namespace {

constexpr std::size_t kChunk = 64;

struct Sums {
    std::vector<Tensor> defaulted, other;
    std::size_t n_defaulted = 0, n_other = 0;
};

void add_into(std::vector<Tensor>& into, const std::vector<Tensor>& maps) {
    if (into.empty()) {
        into = maps;
        return;
    }
    for (std::size_t k = 0; k < maps.size(); ++k) {
        auto dst = into[k].data();
        auto src = maps[k].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

std::optional<AttentionGroup> average(std::string tag, std::vector<Tensor>& sums, std::size_t count) {
    if (count == 0) return std::nullopt;
    AttentionGroup g{std::move(tag), count, std::move(sums)};
    for (auto& m : g.maps)
        for (double& v : m.storage()) v /= static_cast<double>(count);
    return g;
}

std::string fp32_text(double v) { return format_double(static_cast<double>(static_cast<float>(v))); }

}  // namespace

AttentionMapSet extract_attention(const Checkpoint& checkpoint, const PreparedSet& data, ChannelKind channel,
                                  std::size_t horizon) {
    const FusionConfig& config = checkpoint.model.config;
    const std::size_t slot = config.slot(channel);
    const ModelSpec& spec = config.channels[slot].spec;
    if (spec.kind != ModelKind::Tep)
        throw InvalidArgument("attention extraction needs a tep model on '" + std::string(to_string(channel)) +
                              "', found " + std::string(to_string(spec.kind)));
    if (horizon >= kHorizons) throw InvalidArgument("horizon index out of range");
    const auto cols = channel_columns(config, data);

    AttentionMapSet out;
    out.channel = channel;
    out.layers = spec.tep.layers;
    out.heads = spec.tep.heads;
    out.window = spec.window;
    out.horizon = horizon;

    // Fixed chunks reduced in index order keep the sums independent of scheduling.
    const std::size_t chunks = (data.items.size() + kChunk - 1) / kChunk;
    std::vector<Sums> parts(chunks);
    tbb::parallel_for(std::size_t{0}, chunks, [&](std::size_t c) {
        Sums& s = parts[c];
        const std::size_t end = std::min(data.items.size(), (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            const auto& item = data.items[i];
            std::vector<const Tensor*> inputs(cols.size());
            for (std::size_t k = 0; k < cols.size(); ++k) inputs[k] = &item.inputs[cols[k]];
            Tape tape;
            ParamBinder b(tape, checkpoint.model.params, [](const std::string&) { return false; });
            AttentionTrace trace;
            multimodal_forward(b, config, inputs, Mode::Eval, nullptr, &trace, channel);
            if (item.targets[horizon] > 0.5) {
                add_into(s.defaulted, trace.weights);
                ++s.n_defaulted;
            } else {
                add_into(s.other, trace.weights);
                ++s.n_other;
            }
        }
    });
    Sums total;
    for (auto& p : parts) {
        if (p.n_defaulted) add_into(total.defaulted, p.defaulted);
        if (p.n_other) add_into(total.other, p.other);
        total.n_defaulted += p.n_defaulted;
        total.n_other += p.n_other;
    }
    out.defaulted = average("defaulted", total.defaulted, total.n_defaulted);
    out.non_defaulted = average("non-defaulted", total.other, total.n_other);
    if (!out.defaulted) out.warnings.push_back("no defaulted observations; defaulted maps omitted");
    if (!out.non_defaulted) out.warnings.push_back("no non-defaulted observations; non-defaulted maps omitted");
    return out;
}

std::string position_label(std::size_t index, std::size_t window) {
    const std::size_t back = window - 1 - index;
    return back == 0 ? "t" : "t-" + std::to_string(back);
}

std::size_t column_mass_argmax(const Tensor& map) {
    std::size_t best = 0;
    double best_mass = -1.0;
    for (std::size_t j = 0; j < map.cols(); ++j) {
        double mass = 0.0;
        for (std::size_t i = 0; i < map.rows(); ++i) mass += map(i, j);
        if (mass > best_mass) {
            best_mass = mass;
            best = j;
        }
    }
    return best;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InvalidArgument("cannot write " + path.string());
    f << text;
    if (!f) throw InvalidArgument("failed writing " + path.string());
}

std::string heatmap_csv(const Tensor& m) {
    const std::size_t w = m.cols();
    std::string s = "out_pos";
    for (std::size_t j = 0; j < w; ++j) s += ",in_" + position_label(j, w);
    s += "\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        s += position_label(i, m.rows());
        for (std::size_t j = 0; j < w; ++j) s += "," + fp32_text(m(i, j));
        s += "\n";
    }
    return s;
}

// White to dark blue.
std::string colour(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto ch = [t](double lo, double hi) { return static_cast<int>(std::lround(lo + (hi - lo) * t)); };
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(255, 8), ch(255, 48), ch(255, 107));
    return buf;
}

std::string heatmap_svg(const AttentionMapSet& set, const AttentionGroup& g) {
    const std::size_t w = set.window;
    const double cell = std::max(2.0, std::min(14.0, 240.0 / static_cast<double>(w)));
    const double panel = cell * static_cast<double>(w), gap = 24, margin = 40;
    double lo = 1e300, hi = -1e300;
    for (const auto& m : g.maps)
        for (double v : m.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double range = hi - lo;

    std::ostringstream os;
    const double width = margin + static_cast<double>(set.heads) * (panel + gap);
    const double height = margin + static_cast<double>(set.layers) * (panel + gap);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<text x=\"4\" y=\"14\">" << to_string(set.channel) << " attention, " << g.tag << " (n=" << g.count
       << "), scale " << fp32_text(lo) << " to " << fp32_text(hi) << "</text>\n";
    for (std::size_t l = 0; l < set.layers; ++l)
        for (std::size_t h = 0; h < set.heads; ++h) {
            const Tensor& m = set.map(g, l, h);
            const double x0 = margin + static_cast<double>(h) * (panel + gap);
            const double y0 = margin + static_cast<double>(l) * (panel + gap);
            os << "<text x=\"" << x0 << "\" y=\"" << y0 - 4 << "\">layer " << l + 1 << ", head " << h + 1 << "</text>\n";
            for (std::size_t i = 0; i < w; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const double t = range > 0 ? (m(i, j) - lo) / range : 0.5;
                    os << "<rect x=\"" << x0 + cell * static_cast<double>(j) << "\" y=\""
                       << y0 + cell * static_cast<double>(i) << "\" width=\"" << cell << "\" height=\"" << cell
                       << "\" fill=\"" << colour(t) << "\"/>\n";
                }
        }
    os << "</svg>\n";
    return os.str();
}

std::string file_tag(const std::string& tag) { return tag == "defaulted" ? "defaulted" : "non_defaulted"; }

}  // namespace

std::vector<std::filesystem::path> export_heatmap(const AttentionMapSet& maps, const std::filesystem::path& dir) {
    if (!maps.defaulted && !maps.non_defaulted) throw InvalidArgument("export_heatmap: no maps to export");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw InvalidArgument("cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    for (const auto* g : {&maps.defaulted, &maps.non_defaulted}) {
        if (!*g) continue;
        const std::string tag = file_tag((*g)->tag);
        for (std::size_t l = 0; l < maps.layers; ++l)
            for (std::size_t h = 0; h < maps.heads; ++h) {
                const auto path = dir / ("attention_" + tag + "_l" + std::to_string(l + 1) + "_h" +
                                         std::to_string(h + 1) + ".csv");
                write_file(path, heatmap_csv(maps.map(**g, l, h)));
                written.push_back(path);
            }
        const auto svg = dir / ("attention_" + tag + ".svg");
        write_file(svg, heatmap_svg(maps, **g));
        written.push_back(svg);
    }
    return written;
}

Tensor read_heatmap_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InvalidArgument("cannot open " + path.string());
    std::string line;
    std::getline(f, line);
    if (line.rfind("out_pos,", 0) != 0) throw ParseError(path.string(), 1, "expected an out_pos header");
    const std::size_t w = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        ++rows;
        std::stringstream ss(line);
        std::string cellv;
        std::getline(ss, cellv, ',');  // row label
        std::size_t n = 0;
        while (std::getline(ss, cellv, ',')) {
            try {
                values.push_back(std::stod(cellv));
            } catch (const std::exception&) {
                throw ParseError(path.string(), rows + 1, "bad number '" + cellv + "'");
            }
            ++n;
        }
        if (n != w) throw ParseError(path.string(), rows + 1, "expected " + std::to_string(w) + " values");
    }
    return Tensor({rows, w}, std::move(values));
}

}  // namespace tep
