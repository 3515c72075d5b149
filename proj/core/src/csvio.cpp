#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "tep/datapipe.hpp"
#include "tep/error.hpp"

namespace tep {

namespace fs = std::filesystem;

std::string format_double(double v) {
    if (std::isnan(v)) return {};
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* column_prefix(ChannelKind kind) {
    switch (kind) {
        case ChannelKind::Fundamental: return "f_";
        case ChannelKind::Market: return "m_";
        case ChannelKind::Noise: return "n_";
        case ChannelKind::Pricing: break;
    }
    return "";
}

std::string feature_name(ChannelKind kind, std::size_t j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03zu", column_prefix(kind), j + 1);
    return buf;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

class CsvReader {
public:
    explicit CsvReader(const fs::path& path) : path_(path.string()), in_(path) {
        if (!in_) throw ParseError(path_, 0, "cannot open file");
    }

    // Returns false at end of file. Blank lines are skipped.
    bool next(std::vector<std::string_view>& cells) {
        while (std::getline(in_, line_)) {
            ++line_no_;
            if (!line_.empty() && line_.back() == '\r') line_.pop_back();
            if (line_.empty()) continue;
            cells = split(line_);
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, line_no_, what); }

    double number(std::string_view cell, bool allow_empty) const {
        if (cell.empty()) {
            if (allow_empty) return kNaN;
            fail("empty value");
        }
        double v = 0.0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v))
            fail("malformed number '" + std::string(cell) + "'");
        return v;
    }

    Date date(std::string_view cell) const {
        try {
            return Date::parse(cell);
        } catch (const InvalidArgument& e) {
            fail(e.what());
        }
    }

    void expect_header(const std::vector<std::string>& expected) {
        std::vector<std::string_view> cells;
        if (!next(cells)) fail("missing header row");
        if (cells.size() != expected.size()) fail("header has " + std::to_string(cells.size()) + " columns, expected " +
                                                   std::to_string(expected.size()));
        for (std::size_t i = 0; i < expected.size(); ++i)
            if (cells[i] != expected[i]) fail("header column '" + std::string(cells[i]) + "', expected '" + expected[i] + "'");
    }

    std::vector<std::string_view> header() {
        std::vector<std::string_view> cells;
        if (!next(cells)) fail("missing header row");
        header_.assign(cells.begin(), cells.end());
        return {header_.begin(), header_.end()};
    }

private:
    std::string path_;
    std::ifstream in_;
    std::string line_;
    std::size_t line_no_ = 0;
    std::vector<std::string> header_;
};

void read_quarterly(const fs::path& path, ChannelKind kind, RawPanel& raw, std::map<std::string, FirmRecord>& firms) {
    CsvReader r(path);
    const auto head = r.header();
    if (head.size() < 3 || head[0] != "firm_id" || head[1] != "report_date")
        r.fail("header must start with firm_id,report_date and name at least one feature");
    const std::size_t f = head.size() - 2;
    for (std::size_t j = 0; j < f; ++j)
        if (head[j + 2] != feature_name(kind, j))
            r.fail("header column '" + std::string(head[j + 2]) + "', expected '" + feature_name(kind, j) + "'");
    const auto k = static_cast<std::size_t>(kind);
    raw.features[k] = f;
    raw.present[k] = true;
    std::vector<std::string_view> cells;
    while (r.next(cells)) {
        if (cells.size() != f + 2) r.fail("expected " + std::to_string(f + 2) + " cells, got " + std::to_string(cells.size()));
        if (cells[0].empty()) r.fail("empty firm_id");
        QuarterlyRow row{r.date(cells[1]), std::vector<double>(f)};
        for (std::size_t j = 0; j < f; ++j) row.values[j] = r.number(cells[j + 2], true);
        FirmRecord& firm = firms[std::string(cells[0])];
        firm.quarterly[k].push_back(std::move(row));
    }
}

void read_pricing(const fs::path& path, RawPanel& raw, std::map<std::string, FirmRecord>& firms) {
    CsvReader r(path);
    r.expect_header({"firm_id", "trade_date", "high", "low", "close"});
    raw.features[static_cast<std::size_t>(ChannelKind::Pricing)] = 3;
    raw.present[static_cast<std::size_t>(ChannelKind::Pricing)] = true;
    std::vector<std::string_view> cells;
    while (r.next(cells)) {
        if (cells.size() != 5) r.fail("expected 5 cells, got " + std::to_string(cells.size()));
        if (cells[0].empty()) r.fail("empty firm_id");
        PriceRow row{r.date(cells[1]), r.number(cells[2], false), r.number(cells[3], false), r.number(cells[4], false)};
        if (!(row.high > 0.0 && row.low > 0.0 && row.close > 0.0)) r.fail("prices must be positive");
        firms[std::string(cells[0])].pricing.push_back(row);
    }
}

void read_labels(const fs::path& path, RawPanel& raw, std::map<std::string, FirmRecord>& firms) {
    CsvReader r(path);
    r.expect_header({"firm_id", "default_date"});
    std::vector<std::string_view> cells;
    while (r.next(cells)) {
        if (cells.size() != 2) r.fail("expected 2 cells, got " + std::to_string(cells.size()));
        auto it = firms.find(std::string(cells[0]));
        if (it == firms.end()) {
            raw.warnings.push_back("labels: unknown firm '" + std::string(cells[0]) + "' ignored");
            continue;
        }
        if (!cells[1].empty()) it->second.default_date = r.date(cells[1]);
    }
}

template <class Row>
void sort_by_date(std::vector<Row>& rows, const std::string& firm, std::string_view what) {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].date == rows[i - 1].date)
            throw ParseError(std::string(what), 0, "firm '" + firm + "' has two rows dated " + rows[i].date.to_string());
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    return out;
}

}  // namespace

ChannelPaths default_paths(const fs::path& dir) {
    ChannelPaths p{dir / "fundamental.csv", dir / "market.csv", dir / "pricing.csv", dir / "noise.csv",
                   dir / "labels.csv"};
    if (!fs::exists(p.market)) p.market.clear();
    if (!fs::exists(p.pricing)) p.pricing.clear();
    if (!fs::exists(p.noise)) p.noise.clear();
    return p;
}

RawPanel read_raw_panel(const ChannelPaths& paths) {
    if (paths.fundamental.empty()) throw InvalidArgument("a fundamental.csv path is required");
    if (paths.labels.empty()) throw InvalidArgument("a labels.csv path is required");
    RawPanel raw;
    std::map<std::string, FirmRecord> firms;
    read_quarterly(paths.fundamental, ChannelKind::Fundamental, raw, firms);
    if (!paths.market.empty()) read_quarterly(paths.market, ChannelKind::Market, raw, firms);
    if (!paths.noise.empty()) read_quarterly(paths.noise, ChannelKind::Noise, raw, firms);
    if (!paths.pricing.empty()) read_pricing(paths.pricing, raw, firms);
    read_labels(paths.labels, raw, firms);
    for (auto& [id, firm] : firms) {
        firm.firm_id = id;
        for (auto kind : {ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Noise})
            sort_by_date(firm.quarterly[static_cast<std::size_t>(kind)], id, to_string(kind));
        sort_by_date(firm.pricing, id, "pricing");
        raw.firms.push_back(std::move(firm));
    }
    return raw;
}

void write_raw_panel(const RawPanel& raw, const fs::path& dir) {
    fs::create_directories(dir);
    for (auto kind : {ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Noise}) {
        const auto k = static_cast<std::size_t>(kind);
        if (!raw.present[k]) continue;
        auto out = open_out(dir / (std::string(to_string(kind)) + ".csv"));
        out << "firm_id,report_date";
        for (std::size_t j = 0; j < raw.features[k]; ++j) out << ',' << feature_name(kind, j);
        out << '\n';
        for (const FirmRecord& firm : raw.firms) {
            for (const QuarterlyRow& row : firm.quarterly[k]) {
                out << firm.firm_id << ',' << row.date.to_string();
                for (double v : row.values) out << ',' << format_double(v);
                out << '\n';
            }
        }
    }
    if (raw.present[static_cast<std::size_t>(ChannelKind::Pricing)]) {
        auto out = open_out(dir / "pricing.csv");
        out << "firm_id,trade_date,high,low,close\n";
        for (const FirmRecord& firm : raw.firms)
            for (const PriceRow& row : firm.pricing)
                out << firm.firm_id << ',' << row.date.to_string() << ',' << format_double(row.high) << ','
                    << format_double(row.low) << ',' << format_double(row.close) << '\n';
    }
    auto labels = open_out(dir / "labels.csv");
    labels << "firm_id,default_date\n";
    for (const FirmRecord& firm : raw.firms)
        labels << firm.firm_id << ',' << (firm.default_date ? firm.default_date->to_string() : std::string()) << '\n';
}

Dataset load_channels(const ChannelPaths& paths, const PanelConfig& config) {
    return assemble_dataset(read_raw_panel(paths), config);
}

}  // namespace tep
