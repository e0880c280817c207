#include "scadapter/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "scadapter/errors.hpp"

namespace scadapter {

Image::Image(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw InputError("negative image dimensions");
    pixels_.assign(static_cast<std::size_t>(width) * height * 3, fill);
}

Eigen::MatrixXd Image::to_planes() const {
    Eigen::MatrixXd planes(3, static_cast<Eigen::Index>(width_) * height_);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x)
            for (int c = 0; c < 3; ++c) planes(c, y * width_ + x) = at(y, x, c) / 255.0;
    return planes;
}

Image Image::from_planes(const Eigen::MatrixXd& planes, int width, int height) {
    if (planes.rows() != 3 || planes.cols() != static_cast<Eigen::Index>(width) * height)
        throw InputError("plane matrix does not match image dimensions");
    Image img(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp_to_byte(planes(c, y * width + x) * 255.0);
    return img;
}

std::uint8_t clamp_to_byte(double v) {
    if (!(v > 0.0)) return 0;  // also maps NaN to 0
    if (v >= 255.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v));
}

Image resize_bilinear(const Image& src, int width, int height) {
    if (src.empty()) throw InputError("cannot resize an empty image");
    if (width <= 0 || height <= 0) throw InputError("resize target must have nonzero area");
    if (width == src.width() && height == src.height()) return src;
    Image dst(width, height);
    const double sx = static_cast<double>(src.width()) / width;
    const double sy = static_cast<double>(src.height()) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
                const double bot = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
                dst.at(y, x, c) = clamp_to_byte((1 - wy) * top + wy * bot);
            }
        }
    }
    return dst;
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        int ch = in.peek();
        if (ch == '#') {
            std::string discard;
            std::getline(in, discard);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    in >> tok;
    return tok;
}

int parse_dim(const std::string& tok, const std::filesystem::path& path) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw InputError("undecodable image " + path.string() + ": bad header field '" + tok + "'");
    }
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open image " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P6" && magic != "P3")
        throw InputError("undecodable image " + path.string() + ": expected PPM (P6/P3)");
    const int width = parse_dim(next_token(in), path);
    const int height = parse_dim(next_token(in), path);
    const int maxval = parse_dim(next_token(in), path);
    if (maxval != 255) throw InputError("undecodable image " + path.string() + ": only maxval 255 supported");
    Image img(width, height);
    auto bytes = img.bytes();
    if (magic == "P6") {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
            throw InputError("undecodable image " + path.string() + ": truncated pixel data");
    } else {
        for (auto& b : bytes) {
            int v = -1;
            if (!(in >> v) || v < 0 || v > 255)
                throw InputError("undecodable image " + path.string() + ": bad ASCII sample");
            b = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    auto bytes = image.bytes();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

Image tile_grid(std::span<const Image> tiles, int columns, int padding) {
    if (tiles.empty()) throw InputError("no tiles to arrange");
    const int tw = tiles.front().width();
    const int th = tiles.front().height();
    for (const auto& t : tiles)
        if (t.width() != tw || t.height() != th) throw InputError("grid tiles must share dimensions");
    columns = std::max(1, std::min<int>(columns, static_cast<int>(tiles.size())));
    const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
    Image grid(columns * tw + (columns - 1) * padding, rows * th + (rows - 1) * padding, 255);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int ox = static_cast<int>(i % columns) * (tw + padding);
        const int oy = static_cast<int>(i / columns) * (th + padding);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                for (int c = 0; c < 3; ++c) grid.at(oy + y, ox + x, c) = tiles[i].at(y, x, c);
    }
    return grid;
}

}  // namespace scadapter
