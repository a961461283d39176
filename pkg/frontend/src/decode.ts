// Payload decoding helpers that work in both browser and node test runs.

export function b64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) {
      out[i] = bin.charCodeAt(i);
    }
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export async function inflate(bytes: Uint8Array): Promise<Uint8Array> {
  if (typeof DecompressionStream === "function") {
    const stream = new Blob([bytes as BlobPart])
      .stream()
      .pipeThrough(new DecompressionStream("deflate"));
    const buf = await new Response(stream).arrayBuffer();
    return new Uint8Array(buf);
  }
  const zlib = await import("node:zlib");
  return new Uint8Array(zlib.inflateSync(bytes));
}

export async function decodeFloatPlane(
  b64: string,
  shape: [number, number],
): Promise<{ data: Float32Array; shape: [number, number] }> {
  const raw = await inflate(b64ToBytes(b64));
  const data = new Float32Array(raw.buffer, raw.byteOffset, shape[0] * shape[1]);
  return { data, shape };
}
