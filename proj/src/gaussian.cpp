#include "csd/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "csd/errors.hpp"

namespace csd {

namespace {

// SH band-0 basis constant; the PLY layout stores colors as DC coefficients
// so that splat viewers decode them as 0.5 + kShC0 * f_dc.
constexpr double kShC0 = 0.28209479177387814;

constexpr double kCovarianceConditionCap = 1e12;

}  // namespace

Mat3 rotation_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance_from_scale_rotation(const Vec3& log_scale, const Vec4& q) {
    if (!log_scale.allFinite() || !q.allFinite())
        throw InvalidParameter("covariance_from_scale_rotation: non-finite input");
    const double norm = q.norm();
    if (std::abs(norm - 1.0) >= 1e-3)
        throw UnnormalizedRotation("covariance_from_scale_rotation: |q| = " + std::to_string(norm));
    const Mat3 r = rotation_matrix(q / norm);
    const Vec3 s2 = (2.0 * log_scale).array().exp();
    return r * s2.asDiagonal() * r.transpose();
}

double evaluate_gaussian(const Mat3& sigma, const Vec3& l) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(sigma);
    const Vec3 ev = eig.eigenvalues();
    if (!(ev[0] > 0.0) || ev[2] / ev[0] >= kCovarianceConditionCap)
        throw SingularCovariance("evaluate_gaussian: covariance condition number >= 1e12");
    const Vec3 solved = eig.eigenvectors() * (eig.eigenvectors().transpose() * l).cwiseQuotient(ev);
    return std::exp(-0.5 * l.dot(solved));
}

GaussianCloud init_cloud(int count, double radius, double opacity, const Vec3& color,
                         std::uint64_t seed) {
    if (count < 1) throw InvalidParameter("init_cloud: count must be >= 1");
    if (!(radius > 0.0)) throw InvalidParameter("init_cloud: radius must be > 0");
    if (!(opacity > 0.0 && opacity < 1.0)) throw InvalidParameter("init_cloud: opacity must be in (0,1)");
    if ((color.array() < 0.0).any() || (color.array() > 1.0).any())
        throw InvalidParameter("init_cloud: color must be in [0,1]^3");

    Rng rng(seed);
    GaussianCloud cloud;
    cloud.gaussians.resize(count);
    const double opacity_logit = std::log(opacity / (1.0 - opacity));
    for (auto& g : cloud.gaussians) {
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        while (dir.norm() < 1e-12) dir = Vec3(rng.normal(), rng.normal(), rng.normal());
        const double r = radius * std::cbrt(rng.uniform());
        g.position = r * dir.normalized();
        g.color = color;
        g.opacity_logit = opacity_logit;
        g.rotation = Vec4(1, 0, 0, 0);
    }

    // Isotropic scale from the mean nearest-neighbor spacing (3-sigma extent
    // roughly fills the local gap); a lone Gaussian falls back to radius.
    double mean_nn = radius;
    if (count > 1) {
        double total = 0.0;
        for (int i = 0; i < count; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < count; ++j) {
                if (i == j) continue;
                best = std::min(best, (cloud[i].position - cloud[j].position).norm());
            }
            total += best;
        }
        mean_nn = total / count;
    }
    const double s = std::clamp(mean_nn / 3.0, 1e-3, 0.05);
    const Vec3 log_scale = Vec3::Constant(std::log(s));
    for (auto& g : cloud.gaussians) g.log_scale = log_scale;
    return cloud;
}

namespace {

const char* const kPropertyNames[14] = {"x",       "y",       "z",      "f_dc_0", "f_dc_1",
                                        "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                        "rot_0",   "rot_1",   "rot_2",  "rot_3"};

std::size_t property_size(const std::string& type) {
    if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
    if (type == "int" || type == "uint" || type == "int32" || type == "uint32" || type == "float" ||
        type == "float32")
        return 4;
    if (type == "double" || type == "float64" || type == "int64" || type == "uint64") return 8;
    return 0;
}

}  // namespace

void save_cloud(const GaussianCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_cloud: cannot open " + path);

    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    for (const char* name : kPropertyNames) out << "property float " << name << "\n";
    out << "end_header\n";

    std::vector<float> row(14);
    for (const auto& g : cloud.gaussians) {
        row[0] = static_cast<float>(g.position[0]);
        row[1] = static_cast<float>(g.position[1]);
        row[2] = static_cast<float>(g.position[2]);
        for (int c = 0; c < 3; ++c) row[3 + c] = static_cast<float>((g.color[c] - 0.5) / kShC0);
        row[6] = static_cast<float>(g.opacity_logit);
        for (int c = 0; c < 3; ++c) row[7 + c] = static_cast<float>(g.log_scale[c]);
        for (int c = 0; c < 4; ++c) row[10 + c] = static_cast<float>(g.rotation[c]);
        out.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
    }
    if (!out) throw IoError("save_cloud: write failed for " + path);
}

GaussianCloud load_cloud(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_cloud: cannot open " + path);

    std::size_t offset = 0;
    auto read_line = [&](std::string& line) {
        if (!std::getline(in, line)) throw FormatError("load_cloud: truncated header", offset);
        offset += line.size() + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
    };

    std::string line;
    read_line(line);
    if (line != "ply") throw FormatError("load_cloud: missing ply magic", 0);
    read_line(line);
    if (line != "format binary_little_endian 1.0")
        throw FormatError("load_cloud: unsupported format '" + line + "'", offset - line.size() - 1);

    std::size_t count = 0;
    bool in_vertex = false;
    bool seen_vertex = false;
    std::vector<std::pair<std::string, std::size_t>> props;  // name -> byte size
    while (true) {
        const std::size_t line_start = offset;
        read_line(line);
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string name;
            ss >> name >> count;
            in_vertex = (name == "vertex");
            if (in_vertex) seen_vertex = true;
            else if (seen_vertex)
                throw FormatError("load_cloud: unsupported extra element '" + name + "'", line_start);
            continue;
        }
        if (word == "property") {
            if (!in_vertex) continue;
            std::string type, name;
            ss >> type >> name;
            if (type == "list") throw FormatError("load_cloud: list property unsupported", line_start);
            const std::size_t size = property_size(type);
            if (size == 0) throw FormatError("load_cloud: unknown property type '" + type + "'", line_start);
            props.emplace_back(name, size);
            continue;
        }
        if (word == "end_header") break;
        throw FormatError("load_cloud: unexpected header line '" + line + "'", line_start);
    }
    if (!seen_vertex) throw FormatError("load_cloud: no vertex element", offset);

    // Locate our 14 properties; extras are skipped by stride.
    std::size_t stride = 0;
    std::map<std::string, std::size_t> byte_offset;
    for (const auto& [name, size] : props) {
        byte_offset[name] = stride;
        stride += size;
    }
    std::array<std::size_t, 14> at{};
    for (int i = 0; i < 14; ++i) {
        auto it = byte_offset.find(kPropertyNames[i]);
        if (it == byte_offset.end())
            throw FormatError(std::string("load_cloud: missing property '") + kPropertyNames[i] + "'",
                              offset);
        at[i] = it->second;
    }

    GaussianCloud cloud;
    cloud.gaussians.resize(count);
    std::vector<char> row(stride);
    for (std::size_t i = 0; i < count; ++i) {
        in.read(row.data(), static_cast<std::streamsize>(stride));
        if (static_cast<std::size_t>(in.gcount()) != stride)
            throw FormatError("load_cloud: truncated vertex data", offset + in.gcount());
        offset += stride;
        auto get = [&](int p) {
            float v;
            std::memcpy(&v, row.data() + at[p], sizeof(float));
            return static_cast<double>(v);
        };
        Gaussian& g = cloud.gaussians[i];
        g.position = Vec3(get(0), get(1), get(2));
        for (int c = 0; c < 3; ++c) g.color[c] = 0.5 + kShC0 * get(3 + c);
        g.opacity_logit = get(6);
        g.log_scale = Vec3(get(7), get(8), get(9));
        g.rotation = Vec4(get(10), get(11), get(12), get(13));
    }
    return cloud;
}

}  // namespace csd
