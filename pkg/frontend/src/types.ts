export interface Box {
  id: number;
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface SequenceInfo {
  name: string;
  frame_count: number;
  image_width: number;
  image_height: number;
  dirty: boolean;
}

export interface FramePayload {
  frame_id: number;
  boxes: Box[];
}
