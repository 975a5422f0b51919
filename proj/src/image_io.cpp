#include "mcn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mcn {

namespace {

uint8_t to_byte(double v) {
    double b = std::lround((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    return static_cast<uint8_t>(std::clamp(b, 0.0, 255.0));
}

float from_byte(uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

}  // namespace

void write_pgm(const std::string& path, const Tensor& image) {
    int h, w;
    if (image.ndim() == 3 && image.dim(0) == 1) {
        h = image.dim(1);
        w = image.dim(2);
    } else if (image.ndim() == 2) {
        h = image.dim(0);
        w = image.dim(1);
    } else {
        throw ShapeError("write_pgm: expected [1,H,W] or [H,W]");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            row[static_cast<size_t>(x)] = to_byte(image.get(static_cast<int64_t>(y) * w + x));
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!out) throw DataError("short write to '" + path + "'");
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path + "'");
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw DataError("'" + path + "' is not an 8-bit binary PGM");
    in.get();  // single whitespace after header
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError("short read from '" + path + "'");
    Tensor t = Tensor::zeros({1, h, w}, DType::F32);
    for (size_t i = 0; i < buf.size(); ++i) t.set(static_cast<int64_t>(i), from_byte(buf[i]));
    return t;
}

void write_ppm_grid(const std::string& path, const Tensor& batch, int cols) {
    if (batch.ndim() != 4 || batch.dim(1) != 1)
        throw ShapeError("write_ppm_grid: expected [N,1,H,W]");
    if (cols < 1) throw ShapeError("write_ppm_grid: cols must be >= 1");
    const int n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
    const int rows = (n + cols - 1) / cols;
    const int gw = cols * w, gh = rows * h;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "P6\n" << gw << " " << gh << "\n255\n";
    std::vector<uint8_t> line(static_cast<size_t>(gw) * 3, 0);
    for (int gy = 0; gy < gh; ++gy) {
        int tile_row = gy / h, y = gy % h;
        for (int gx = 0; gx < gw; ++gx) {
            int tile_col = gx / w, x = gx % w;
            int idx = tile_row * cols + tile_col;
            uint8_t v = 0;
            if (idx < n)
                v = to_byte(batch.get((static_cast<int64_t>(idx) * h + y) * w + x));
            line[static_cast<size_t>(gx) * 3] = v;
            line[static_cast<size_t>(gx) * 3 + 1] = v;
            line[static_cast<size_t>(gx) * 3 + 2] = v;
        }
        out.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(line.size()));
    }
    if (!out) throw DataError("short write to '" + path + "'");
}

}  // namespace mcn
