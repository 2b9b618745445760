#pragma once

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/flow.hpp"
#include "sdtd/image.hpp"
#include "sdtd/tensor.hpp"
#include "sdtd/texture.hpp"
#include "sdtd/trajectory.hpp"

namespace sdtd::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// little-endian primitives (all on-disk formats are little-endian)

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& ctx) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw DataError(ctx + ": truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t get_u16(std::istream& is, const std::string& ctx) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2))
        throw DataError(ctx + ": truncated file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline float get_f32(std::istream& is, const std::string& ctx) {
    const std::uint32_t bits = get_u32(is, ctx);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PNG and PGM

inline void write_png(const fs::path& path, const Image8& img) {
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw DataError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("png write failed: " + path.string());
    }
    png_init_io(png, fp);
    const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(
            img.data.data() + static_cast<std::size_t>(y) * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image8 read_png(const fs::path& path) {
    FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw DataError("cannot open: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("png read failed: " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth > 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("unsupported bit depth (>8): " + path.string());
    }
    png_set_expand(png);  // palettes and low bit depths to 8-bit
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA)
        png_set_strip_alpha(png);
    png_read_update_info(png, info);
    Image8 img;
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    img.data.resize(static_cast<std::size_t>(img.height) * img.width * img.channels);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = img.data.data() + static_cast<std::size_t>(y) * img.width * img.channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void write_pgm(const fs::path& path, const Image8& img) {
    if (img.channels != 1) throw DataError("pgm supports grayscale only");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
}

inline Image8 read_pgm(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P5") throw DataError("unsupported pgm magic in " + path.string());
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (maxval > 255) throw DataError("unsupported bit depth (>8): " + path.string());
    is.get();  // single whitespace after header
    Image8 img;
    img.height = h;
    img.width = w;
    img.channels = 1;
    img.data.resize(static_cast<std::size_t>(h) * w);
    if (!is.read(reinterpret_cast<char*>(img.data.data()),
                 static_cast<std::streamsize>(img.data.size())))
        throw DataError("truncated pgm: " + path.string());
    return img;
}

inline Frame to_frame(const Image8& img) {
    Frame f(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        f.data[i] = static_cast<float>(img.data[i]) / 255.0f;
    return f;
}

inline Image8 to_image8(const Frame& f) {
    Image8 img;
    img.height = f.height;
    img.width = f.width;
    img.channels = f.channels;
    img.data.resize(f.data.size());
    for (std::size_t i = 0; i < f.data.size(); ++i) {
        if (!is_finite(f.data[i])) throw NumericError("to_image8: nonfinite pixel");
        const float v = std::clamp(f.data[i], 0.0f, 1.0f);
        img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return img;
}

// ---------------------------------------------------------------------------
// frame sequences

// `path` is either a directory of PNG/PGM files (lexicographic order) or a
// text file listing one image path per line.
inline FrameSequence load_frame_sequence(const fs::path& path) {
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            const std::string ext = e.path().extension().string();
            if (ext == ".png" || ext == ".pgm") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
    } else if (fs::is_regular_file(path)) {
        std::ifstream is(path);
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty()) files.emplace_back(line);
        }
    } else {
        throw DataError("no such path: " + path.string());
    }
    if (files.empty()) throw DataError("no frames in " + path.string());

    FrameSequence seq;
    seq.id = path.filename().string();
    for (const fs::path& f : files) {
        Image8 img = f.extension() == ".pgm" ? read_pgm(f) : read_png(f);
        Frame frame = to_frame(img);
        if (!seq.frames.empty() && !frame.same_size(seq.frames.front()))
            throw DataError("mixed dimensions at " + f.string());
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

inline void write_frames(const FrameSequence& seq, const fs::path& dir) {
    fs::create_directories(dir);
    char name[32];
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "frame_%06zu.png", i);
        write_png(dir / name, to_image8(seq.frames[i]));
    }
}

// ---------------------------------------------------------------------------
// Middlebury .flo

inline constexpr float kFloMagic = 202021.25f;  // "PIEH" as a little-endian float

inline void write_flo(const FlowField& flow, const fs::path& path) {
    for (std::size_t i = 0; i < flow.pixel_count(); ++i)
        if (!is_finite(flow.u[i]) || !is_finite(flow.v[i]))
            throw NumericError("write_flo: nonfinite flow component");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    detail::put_f32(os, kFloMagic);
    detail::put_u32(os, static_cast<std::uint32_t>(flow.width));
    detail::put_u32(os, static_cast<std::uint32_t>(flow.height));
    for (int y = 0; y < flow.height; ++y)
        for (int x = 0; x < flow.width; ++x) {
            detail::put_f32(os, flow.u_at(y, x));
            detail::put_f32(os, flow.v_at(y, x));
        }
    if (!os) throw DataError("write failed: " + path.string());
}

inline FlowField read_flo(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    const float magic = detail::get_f32(is, path.string());
    if (magic != kFloMagic) throw DataError("bad magic in " + path.string());
    const int w = static_cast<int>(detail::get_u32(is, path.string()));
    const int h = static_cast<int>(detail::get_u32(is, path.string()));
    if (w <= 0 || h <= 0) throw DataError("bad dimensions in " + path.string());
    FlowField flow(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            flow.u_at(y, x) = detail::get_f32(is, path.string());
            flow.v_at(y, x) = detail::get_f32(is, path.string());
        }
    return flow;
}

// ---------------------------------------------------------------------------
// trajectory files: "SDTD" magic, u32 version, u32 count, u16 H, u16 W,
// then per trajectory: u32 start_frame, u32 length, length x f32 quadruples.

inline constexpr std::uint32_t kTrajVersion = 1;

inline void write_trajectories(const TrajectorySet& set, const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write("SDTD", 4);
    detail::put_u32(os, kTrajVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(set.trajectories.size()));
    detail::put_u16(os, static_cast<std::uint16_t>(set.frame_height));
    detail::put_u16(os, static_cast<std::uint16_t>(set.frame_width));
    for (const Trajectory& t : set.trajectories) {
        detail::put_u32(os, static_cast<std::uint32_t>(t.start_frame));
        detail::put_u32(os, static_cast<std::uint32_t>(t.points.size()));
        for (const TrajectoryPoint& p : t.points) {
            if (!is_finite(p.x) || !is_finite(p.y) || !is_finite(p.dx) || !is_finite(p.dy))
                throw NumericError("write_trajectories: nonfinite value");
            detail::put_f32(os, p.x);
            detail::put_f32(os, p.y);
            detail::put_f32(os, p.dx);
            detail::put_f32(os, p.dy);
        }
    }
    if (!os) throw DataError("write failed: " + path.string());
}

inline TrajectorySet read_trajectories(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SDTD", 4) != 0)
        throw DataError("bad magic in " + path.string());
    const std::uint32_t version = detail::get_u32(is, path.string());
    if (version != kTrajVersion)
        throw DataError("version mismatch in " + path.string());
    const std::uint32_t count = detail::get_u32(is, path.string());
    TrajectorySet set;
    set.frame_height = detail::get_u16(is, path.string());
    set.frame_width = detail::get_u16(is, path.string());
    set.trajectories.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Trajectory& t = set.trajectories[i];
        t.start_frame = static_cast<int>(detail::get_u32(is, path.string()));
        const std::uint32_t len = detail::get_u32(is, path.string());
        t.points.resize(len);
        for (std::uint32_t j = 0; j < len; ++j) {
            t.points[j].x = detail::get_f32(is, path.string());
            t.points[j].y = detail::get_f32(is, path.string());
            t.points[j].dx = detail::get_f32(is, path.string());
            t.points[j].dy = detail::get_f32(is, path.string());
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// named-tensor checkpoints: "SDCK", u32 version, u32 count, then per tensor
// u32 name length + bytes, u32 rank, u32 dims..., f32 payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    std::vector<int> shape;
    std::vector<float> data;
};

using Checkpoint = std::map<std::string, CheckpointTensor>;

inline void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write("SDCK", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(ckpt.size()));
    for (const auto& [name, tensor] : ckpt) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(tensor.shape.size()));
        std::size_t n = 1;
        for (int d : tensor.shape) {
            detail::put_u32(os, static_cast<std::uint32_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        if (n != tensor.data.size())
            throw DataError("save_checkpoint: shape/data mismatch for " + name);
        for (float v : tensor.data) {
            if (!is_finite(v))
                throw NumericError("save_checkpoint: nonfinite value in " + name);
            detail::put_f32(os, v);
        }
    }
    if (!os) throw DataError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SDCK", 4) != 0)
        throw DataError("bad magic in " + path.string());
    if (detail::get_u32(is, path.string()) != kCheckpointVersion)
        throw DataError("version mismatch in " + path.string());
    const std::uint32_t count = detail::get_u32(is, path.string());
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(is, path.string());
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw DataError(path.string() + ": truncated file");
        CheckpointTensor t;
        const std::uint32_t rank = detail::get_u32(is, path.string());
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            t.shape.push_back(static_cast<int>(detail::get_u32(is, path.string())));
            n *= static_cast<std::size_t>(t.shape.back());
        }
        t.data.resize(n);
        for (std::size_t k = 0; k < n; ++k) t.data[k] = detail::get_f32(is, path.string());
        ckpt.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// TTI raw float dumps: "SDTT", u32 version, u32 count, u32 H, u32 W, u32 C,
// then per image: u32 first_frame, u32 last_frame, f32 payload.

inline void write_tti_raw(const TtiSequence& seq, int height, int width, int channels,
                          const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write("SDTT", 4);
    detail::put_u32(os, 1);
    detail::put_u32(os, static_cast<std::uint32_t>(seq.images.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(height));
    detail::put_u32(os, static_cast<std::uint32_t>(width));
    detail::put_u32(os, static_cast<std::uint32_t>(channels));
    for (std::size_t i = 0; i < seq.images.size(); ++i) {
        detail::put_u32(os, static_cast<std::uint32_t>(seq.segment_bounds[i].first_frame));
        detail::put_u32(os, static_cast<std::uint32_t>(seq.segment_bounds[i].last_frame));
        for (float v : seq.images[i].data) {
            if (!is_finite(v)) throw NumericError("write_tti_raw: nonfinite value");
            detail::put_f32(os, v);
        }
    }
}

inline TtiSequence read_tti_raw(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SDTT", 4) != 0)
        throw DataError("bad magic in " + path.string());
    if (detail::get_u32(is, path.string()) != 1)
        throw DataError("version mismatch in " + path.string());
    const std::uint32_t count = detail::get_u32(is, path.string());
    const int h = static_cast<int>(detail::get_u32(is, path.string()));
    const int w = static_cast<int>(detail::get_u32(is, path.string()));
    const int c = static_cast<int>(detail::get_u32(is, path.string()));
    TtiSequence seq;
    for (std::uint32_t i = 0; i < count; ++i) {
        TtiSegmentBounds b;
        b.first_frame = static_cast<int>(detail::get_u32(is, path.string()));
        b.last_frame = static_cast<int>(detail::get_u32(is, path.string()));
        Frame img(h, w, c);
        for (float& v : img.data) v = detail::get_f32(is, path.string());
        seq.images.push_back(std::move(img));
        seq.segment_bounds.push_back(b);
    }
    return seq;
}

// ---------------------------------------------------------------------------
// dataset manifest: one "path\tlabel\tsplit" line per video

struct ManifestEntry {
    std::string path;
    int label = 0;
    std::string split;  // "train" or "test"
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
};

// Resolve an entry path against SDTD_DATA_ROOT when it is relative.
inline fs::path resolve_data_path(const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return path;
    if (const char* root = std::getenv("SDTD_DATA_ROOT"))
        return fs::path(root) / path;
    return path;
}

inline DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path.string());
    struct RawEntry {
        std::string path, label, split;
    };
    std::vector<RawEntry> raw;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        RawEntry e;
        if (!std::getline(ss, e.path, '\t') || !std::getline(ss, e.label, '\t') ||
            !std::getline(ss, e.split, '\t'))
            throw DataError("manifest parse error at line " + std::to_string(lineno));
        if (e.split != "train" && e.split != "test")
            throw DataError("manifest: bad split '" + e.split + "' at line " +
                            std::to_string(lineno));
        raw.push_back(std::move(e));
    }
    DatasetManifest m;
    for (const RawEntry& e : raw) m.class_names.push_back(e.label);
    std::sort(m.class_names.begin(), m.class_names.end());
    m.class_names.erase(std::unique(m.class_names.begin(), m.class_names.end()),
                        m.class_names.end());
    for (const RawEntry& e : raw) {
        ManifestEntry entry;
        entry.path = e.path;
        entry.split = e.split;
        entry.label = static_cast<int>(
            std::lower_bound(m.class_names.begin(), m.class_names.end(), e.label) -
            m.class_names.begin());
        m.entries.push_back(std::move(entry));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    for (const ManifestEntry& e : m.entries)
        os << e.path << '\t' << m.class_names[e.label] << '\t' << e.split << '\n';
}

}  // namespace sdtd::io
