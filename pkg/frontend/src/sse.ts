/** Incremental server-sent-events parser over a fetch body stream. */

export interface SSEMessage {
  event: string;
  data: string;
}

/**
 * Parse an SSE byte stream into messages.
 *
 * Handles events split across chunk boundaries and multiple events per
 * chunk. A message is emitted at each blank-line terminator; any trailing
 * partial message when the stream closes is discarded (the protocol always
 * terminates messages before closing).
 */
export async function* parseSSE(
  stream: ReadableStream<Uint8Array>,
): AsyncGenerator<SSEMessage> {
  const decoder = new TextDecoder();
  const reader = stream.getReader();
  let buffer = "";
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      for (;;) {
        const sep = buffer.indexOf("\n\n");
        if (sep < 0) break;
        const raw = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        const msg = parseMessage(raw);
        if (msg !== null) yield msg;
      }
    }
  } finally {
    reader.releaseLock();
  }
}

function parseMessage(raw: string): SSEMessage | null {
  let event = "message";
  const data: string[] = [];
  for (const line of raw.split("\n")) {
    if (line.startsWith("event: ")) {
      event = line.slice(7);
    } else if (line.startsWith("data: ")) {
      data.push(line.slice(6));
    }
    // comment lines and unknown fields are ignored per the SSE format
  }
  if (data.length === 0) return null;
  return { event, data: data.join("\n") };
}
