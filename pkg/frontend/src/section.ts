/** Binary cross-section payload: one JSON header line, then row-major
 * little-endian int16 HU pixels. Window/level happens client-side so
 * display interaction never touches the server.
 */

export interface SectionHeader {
  width: number;
  height: number;
  spacing: number;
  center_s: number;
}

export interface Section {
  header: SectionHeader;
  pixels: Int16Array; // row-major, header.height rows of header.width
}

export function decodeSectionPayload(buf: ArrayBuffer): Section {
  const bytes = new Uint8Array(buf);
  const nl = bytes.indexOf(0x0a);
  if (nl < 0) {
    throw new Error("section payload has no header line");
  }
  const header = JSON.parse(
    new TextDecoder().decode(bytes.subarray(0, nl)),
  ) as SectionHeader;
  const n = header.width * header.height;
  const body = buf.slice(nl + 1);
  if (body.byteLength !== 2 * n) {
    throw new Error(
      `section pixel block is ${body.byteLength} bytes, expected ${2 * n}`,
    );
  }
  const dv = new DataView(body);
  const pixels = new Int16Array(n);
  for (let i = 0; i < n; i++) {
    pixels[i] = dv.getInt16(2 * i, true);
  }
  return { header, pixels };
}

/** HU to 8-bit gray RGBA under a window (level, width). */
export function windowLevelToRgba(
  pixels: Int16Array,
  level: number,
  width: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (!(width > 0)) {
    throw new RangeError("window width must be positive");
  }
  const lo = level - width / 2;
  const out = new Uint8ClampedArray(4 * pixels.length);
  for (let i = 0; i < pixels.length; i++) {
    const g = Math.round(((pixels[i] - lo) / width) * 255); // clamped on store
    out[4 * i] = g;
    out[4 * i + 1] = g;
    out[4 * i + 2] = g;
    out[4 * i + 3] = 255;
  }
  return out;
}
