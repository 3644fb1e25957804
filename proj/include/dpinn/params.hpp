#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dpinn/errors.hpp"

namespace dpinn {

struct LayerSpan {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
};

/// Flattened trainable parameters of one network (or a bundle of them),
/// addressable by named layer spans. Spans partition [0, size()).
struct ParameterVector {
    std::vector<double> values;
    std::vector<LayerSpan> layout;

    std::size_t size() const { return values.size(); }

    std::span<double> span_of(const std::string& name) {
        for (const auto& s : layout)
            if (s.name == name) return {values.data() + s.offset, s.length};
        throw ShapeError("no layer span named '" + name + "'");
    }

    std::span<const double> span_of(const std::string& name) const {
        for (const auto& s : layout)
            if (s.name == name) return {values.data() + s.offset, s.length};
        throw ShapeError("no layer span named '" + name + "'");
    }

    bool has_span(const std::string& name) const {
        for (const auto& s : layout)
            if (s.name == name) return true;
        return false;
    }

    /// Spans must tile [0, size()) in order with no gaps or overlaps and
    /// carry unique names.
    void validate() const {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < layout.size(); ++i) {
            if (layout[i].offset != pos)
                throw ShapeError("layer span '" + layout[i].name + "' breaks the partition");
            for (std::size_t j = 0; j < i; ++j)
                if (layout[j].name == layout[i].name)
                    throw ShapeError("duplicate layer span name '" + layout[i].name + "'");
            pos += layout[i].length;
        }
        if (pos != values.size()) throw ShapeError("layer spans do not cover the parameter vector");
    }
};

namespace detail {

inline void write_f64_le(std::ostream& os, std::span<const double> xs) {
    static_assert(sizeof(double) == 8);
    for (double x : xs) {
        std::uint64_t u;
        std::memcpy(&u, &x, 8);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
        char buf[8];
        std::memcpy(buf, &u, 8);
        os.write(buf, 8);
    }
}

inline void read_f64_le(std::istream& is, std::span<double> xs) {
    for (double& x : xs) {
        char buf[8];
        is.read(buf, 8);
        std::uint64_t u;
        std::memcpy(&u, buf, 8);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
        std::memcpy(&x, &u, 8);
    }
}

} // namespace detail

/// Checkpoint format: a plain-text manifest (one "span <name> <offset> <len>"
/// line per layer), then a "data <count>" line, then count little-endian
/// IEEE-754 doubles.
inline void save_checkpoint(const ParameterVector& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint file for writing: " + path);
    os << "dpinn-checkpoint 1\n";
    for (const auto& s : p.layout)
        os << "span " << s.name << ' ' << s.offset << ' ' << s.length << '\n';
    os << "data " << p.values.size() << '\n';
    detail::write_f64_le(os, p.values);
    if (!os) throw Error("short write on checkpoint file: " + path);
}

inline ParameterVector load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint file: " + path);
    std::string word;
    int version = 0;
    is >> word >> version;
    if (word != "dpinn-checkpoint" || version != 1)
        throw Error("not a dpinn checkpoint: " + path);
    ParameterVector p;
    while (is >> word) {
        if (word == "span") {
            LayerSpan s;
            is >> s.name >> s.offset >> s.length;
            p.layout.push_back(s);
        } else if (word == "data") {
            std::size_t n = 0;
            is >> n;
            is.get();  // newline before the binary block
            p.values.resize(n);
            detail::read_f64_le(is, p.values);
            if (!is) throw Error("truncated checkpoint data block: " + path);
            p.validate();
            return p;
        } else {
            throw Error("unexpected token '" + word + "' in checkpoint: " + path);
        }
    }
    throw Error("checkpoint has no data block: " + path);
}

} // namespace dpinn
