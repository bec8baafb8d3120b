#pragma once

#include "ccam/error.hpp"
#include "ccam/tensor.hpp"

namespace ccam {

// Bilinear resampling of a (H,W) map with half-pixel-center alignment.
inline Tensor bilinear_resize(const Tensor& src, int out_h, int out_w) {
    if (src.ndim() != 2) throw ShapeError("bilinear_resize expects a (H,W) map");
    const int h = src.dim(0), w = src.dim(1);
    Tensor out({out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        if (fy < 0.0) fy = 0.0;
        if (fy > h - 1) fy = h - 1;
        const int y0 = static_cast<int>(fy);
        const int y1 = y0 + 1 < h ? y0 + 1 : y0;
        const double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            if (fx < 0.0) fx = 0.0;
            if (fx > w - 1) fx = w - 1;
            const int x0 = static_cast<int>(fx);
            const int x1 = x0 + 1 < w ? x0 + 1 : x0;
            const double wx = fx - x0;
            const double top = src.at2(y0, x0) * (1.0 - wx) + src.at2(y0, x1) * wx;
            const double bot = src.at2(y1, x0) * (1.0 - wx) + src.at2(y1, x1) * wx;
            out.at2(oy, ox) = top * (1.0 - wy) + bot * wy;
        }
    }
    return out;
}

}  // namespace ccam
