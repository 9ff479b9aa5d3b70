#include "harope/checkpoint.hpp"

#include <cstdlib>

namespace harope {

namespace {

void append_values(std::string& out, const char* key, std::span<const double> values) {
    out += key;
    out += ' ';
    out += std::to_string(values.size());
    for (double v : values) {
        out += ' ';
        out += format_double(v);
    }
    out += '\n';
}

// whitespace-separated token scanner that remembers byte offsets
struct Scanner {
    const std::string& text;
    std::size_t pos{0};

    bool at_end() {
        skip_ws();
        return pos >= text.size();
    }
    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }
    std::string next(const char* what) {
        skip_ws();
        if (pos >= text.size()) throw FormatError(std::string("checkpoint: missing ") + what, pos);
        const std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        return text.substr(start, pos - start);
    }
    void expect(const char* token) {
        skip_ws();
        const std::size_t start = pos;
        const std::string got = next(token);
        if (got != token) {
            throw FormatError("checkpoint: expected '" + std::string(token) + "', got '" + got +
                              "'", start);
        }
    }
    std::size_t next_count(const char* what) {
        skip_ws();
        const std::size_t start = pos;
        const std::string tok = next(what);
        char* end = nullptr;
        const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
        if (end == tok.c_str() || *end != '\0') {
            throw FormatError("checkpoint: bad count '" + tok + "'", start);
        }
        return static_cast<std::size_t>(v);
    }
    double next_double(const char* what) {
        skip_ws();
        const std::size_t start = pos;
        const std::string tok = next(what);
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') {
            throw FormatError("checkpoint: bad number '" + tok + "'", start);
        }
        return v;
    }
    std::vector<double> next_values(const char* key) {
        expect(key);
        const std::size_t n = next_count("value count");
        std::vector<double> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(next_double("value"));
        return out;
    }
};

}  // namespace

std::string checkpoint_to_text(const Checkpoint& c) {
    std::string out = "harope-checkpoint v1\n";
    out += "blocks " + std::to_string(c.banks.size()) + '\n';
    for (std::size_t b = 0; b < c.banks.size(); ++b) {
        const AdaptBank& bank = c.banks[b];
        bank.validate_bank();
        out += "bank " + std::to_string(b) + " heads " + std::to_string(bank.heads) +
               " shared " + (bank.shared ? std::string("1") : std::string("0")) + '\n';
        for (std::size_t r = 0; r < bank.params.size(); ++r) {
            const HeadAdaptParams& p = bank.params[r];
            out += "record " + std::to_string(r) + '\n';
            out += "variant " + to_string(p.variant) + '\n';
            out += "dim " + std::to_string(p.dim) + '\n';
            switch (p.variant) {
                case AdaptVariant::Identity:
                    break;
                case AdaptVariant::Normal:
                    for (std::size_t i = 0; i < p.dim; ++i) {
                        append_values(out, "dense_row",
                                      std::span<const double>(p.dense.row(i), p.dim));
                    }
                    break;
                case AdaptVariant::Orthogonal:
                    append_values(out, "skew_v", p.skew_v.entries);
                    break;
                case AdaptVariant::SVD:
                    append_values(out, "skew_u", p.skew_u.entries);
                    append_values(out, "skew_v", p.skew_v.entries);
                    append_values(out, "sigma_raw", p.sigma_raw);
                    break;
            }
            out += "end\n";
        }
    }
    return out;
}

Checkpoint checkpoint_from_text(const std::string& text) {
    Scanner s{text};
    s.expect("harope-checkpoint");
    s.expect("v1");
    s.expect("blocks");
    const std::size_t n_blocks = s.next_count("block count");

    Checkpoint c;
    c.banks.reserve(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        s.expect("bank");
        const std::size_t got_b = s.next_count("bank index");
        if (got_b != b) throw FormatError("checkpoint: bank index out of order", s.pos);
        s.expect("heads");
        AdaptBank bank;
        bank.heads = s.next_count("head count");
        s.expect("shared");
        bank.shared = s.next_count("shared flag") != 0;
        const std::size_t records = bank.shared ? 1 : bank.heads;
        for (std::size_t r = 0; r < records; ++r) {
            s.expect("record");
            const std::size_t got_r = s.next_count("record index");
            if (got_r != r) throw FormatError("checkpoint: record index out of order", s.pos);
            s.expect("variant");
            s.skip_ws();
            const std::size_t vstart = s.pos;
            const std::string vtag = s.next("variant tag");
            HeadAdaptParams p;
            try {
                p.variant = adapt_variant_from_string(vtag);
            } catch (const ConfigError& e) {
                throw FormatError(e.what(), vstart);
            }
            s.expect("dim");
            p.dim = s.next_count("dim");
            switch (p.variant) {
                case AdaptVariant::Identity:
                    break;
                case AdaptVariant::Normal: {
                    p.dense = Matrix(p.dim, p.dim);
                    for (std::size_t i = 0; i < p.dim; ++i) {
                        const auto row = s.next_values("dense_row");
                        if (row.size() != p.dim) {
                            throw FormatError("checkpoint: dense row width mismatch", s.pos);
                        }
                        for (std::size_t j = 0; j < p.dim; ++j) p.dense(i, j) = row[j];
                    }
                    break;
                }
                case AdaptVariant::Orthogonal:
                    p.skew_v = SkewParams{p.dim, s.next_values("skew_v")};
                    break;
                case AdaptVariant::SVD:
                    p.skew_u = SkewParams{p.dim, s.next_values("skew_u")};
                    p.skew_v = SkewParams{p.dim, s.next_values("skew_v")};
                    p.sigma_raw = s.next_values("sigma_raw");
                    break;
            }
            s.expect("end");
            try {
                validate(p);
            } catch (const ConfigError& e) {
                throw FormatError(e.what(), s.pos);
            }
            bank.params.push_back(std::move(p));
        }
        try {
            bank.validate_bank();
        } catch (const ConfigError& e) {
            throw FormatError(e.what(), s.pos);
        }
        c.banks.push_back(std::move(bank));
    }
    if (!s.at_end()) throw FormatError("checkpoint: trailing content", s.pos);
    return c;
}

}  // namespace harope
