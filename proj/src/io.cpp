#include "dastm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dastm/error.hpp"

namespace dastm::io {

namespace fs = std::filesystem;

namespace {

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

double parse_double(const std::string& field, const fs::path& path, std::size_t line) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
    double v = 0;
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || begin == end)
        throw IoError(where(path, line) + ": cannot parse number '" + field + "'");
    return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string frame_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.pgm", index + 1);
    return buf;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

void write_pgm(const fs::path& path, const Tensor4& frame) {
    const Shape& s = frame.shape();
    if (s.n != 1 || s.c != 1) throw DimensionError("PGM frames must be (1,1,H,W), got " + s.str());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << s.w << ' ' << s.h << "\n255\n";
    std::vector<unsigned char> bytes(frame.numel());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(frame[i], 0.0, 1.0)));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Tensor4 read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    auto token = [&]() {
        std::string t;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(ch);
        }
        return t;
    };
    if (token() != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw IoError(path.string() + ": malformed PGM header");
    }
    if (w < 1 || h < 1 || maxval != 255) throw IoError(path.string() + ": unsupported PGM geometry or depth");
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw IoError(path.string() + ": truncated PGM payload");
    std::vector<double> values(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = bytes[i] / 255.0;
    return Tensor4({1, 1, h, w}, std::move(values));
}

void write_boxes(const fs::path& path, const std::vector<BBox>& boxes) {
    std::ostringstream out;
    for (const BBox& b : boxes)
        out << format_number(b.x) << ',' << format_number(b.y) << ',' << format_number(b.w) << ','
            << format_number(b.h) << '\n';
    write_text(path, out.str());
}

std::vector<BBox> read_boxes(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<BBox> boxes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 4) throw IoError(where(path, lineno) + ": expected x,y,w,h");
        boxes.push_back({parse_double(fields[0], path, lineno), parse_double(fields[1], path, lineno),
                         parse_double(fields[2], path, lineno), parse_double(fields[3], path, lineno)});
    }
    return boxes;
}

void write_phases(const fs::path& path, const std::vector<Phase>& phases) {
    std::string text;
    for (Phase p : phases) {
        text += phase_name(p);
        text += '\n';
    }
    write_text(path, text);
}

std::vector<Phase> read_phases(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<Phase> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        try {
            out.push_back(parse_phase(line));
        } catch (const ConfigError&) {
            throw IoError(where(path, lineno) + ": unknown phase '" + line + "'");
        }
    }
    return out;
}

void save_sequence(const fs::path& dir, const Sequence& seq) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < seq.frames.size(); ++i) write_pgm(dir / frame_name(i), seq.frames[i]);
    write_boxes(dir / "groundtruth.txt", seq.gt);
    write_phases(dir / "phases.txt", seq.phases);
}

Sequence load_sequence(const fs::path& dir) {
    const fs::path gt_path = dir / "groundtruth.txt";
    if (!fs::exists(gt_path)) throw IoError("missing ground truth: " + gt_path.string());
    Sequence seq;
    seq.gt = read_boxes(gt_path);
    if (seq.gt.empty()) throw IoError(gt_path.string() + ": no boxes");
    const fs::path phases_path = dir / "phases.txt";
    if (fs::exists(phases_path)) {
        seq.phases = read_phases(phases_path);
        if (seq.phases.size() != seq.gt.size())
            throw IoError(phases_path.string() + ": " + std::to_string(seq.phases.size()) + " labels for " +
                          std::to_string(seq.gt.size()) + " frames");
    } else {
        seq.phases.assign(seq.gt.size(), Phase::stable);
    }
    for (std::size_t i = 0; i < seq.gt.size(); ++i) {
        const fs::path frame = dir / frame_name(i);
        if (!fs::exists(frame)) throw IoError("missing frame: " + frame.string());
        seq.frames.push_back(read_pgm(frame));
    }
    seq.occluders.assign(seq.gt.size(), std::nullopt);
    return seq;
}

void write_gate_trace(const fs::path& path, const GateTrace& trace) {
    std::ostringstream out;
    out << kGateTraceHeader << '\n';
    for (const auto& row : trace) {
        out << row.frame << ',' << row.phase;
        for (double w : row.weights) out << ',' << format_number(w);
        out << ',' << branch_name(static_cast<Branch>(row.selected)) << ',' << format_number(row.flops) << '\n';
    }
    write_text(path, out.str());
}

GateTrace read_gate_trace(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != kGateTraceHeader)
        throw IoError(where(path, 1) + ": expected header '" + std::string(kGateTraceHeader) + "'");
    GateTrace trace;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) throw IoError(where(path, lineno) + ": expected 8 fields");
        GateTraceRow row;
        row.frame = static_cast<int>(parse_double(f[0], path, lineno));
        row.phase = f[1];
        for (int b = 0; b < kBranchCount; ++b) row.weights[b] = parse_double(f[2 + b], path, lineno);
        int selected = -1;
        for (int b = 0; b < kBranchCount; ++b)
            if (f[6] == branch_name(static_cast<Branch>(b))) selected = b;
        if (selected < 0) throw IoError(where(path, lineno) + ": unknown branch '" + f[6] + "'");
        row.selected = selected;
        row.flops = parse_double(f[7], path, lineno);
        trace.push_back(row);
    }
    return trace;
}

}  // namespace dastm::io
